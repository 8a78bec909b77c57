#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "opnet/autodiff.hpp"

using namespace opnet;

TEST_CASE("scalar product forward and backward") {
  Graph g;
  NodeId x = g.input(1, 1);
  NodeId y = g.input(1, 1);
  NodeId root = g.sum_all(g.mul(x, y));
  g.set_value(x, Tensor2(1, 1, {3.0}));
  g.set_value(y, Tensor2(1, 1, {4.0}));
  CHECK(g.forward(root) == doctest::Approx(12.0));
  g.backward(root);
  CHECK(g.grad(x).v[0] == doctest::Approx(4.0));
  CHECK(g.grad(y).v[0] == doctest::Approx(3.0));
}

TEST_CASE("mse of identical tensors vanishes; closed-form gradient") {
  Graph g;
  NodeId pred = g.input(2, 3);
  NodeId target = g.constant(Tensor2(2, 3, {1, 2, 3, 4, 5, 6}));
  NodeId root = g.mean_all(g.square_(g.add(pred, g.scale(target, -1.0))));
  g.set_value(pred, Tensor2(2, 3, {1, 2, 3, 4, 5, 6}));
  CHECK(g.forward(root) == doctest::Approx(0.0));
  g.set_value(pred, Tensor2(2, 3, {2, 2, 3, 4, 5, 6}));
  g.forward(root);
  g.backward(root);
  // d mean((p-t)^2) / dp = 2 (p - t) / N
  CHECK(g.grad(pred).v[0] == doctest::Approx(2.0 / 6.0));
  for (int i = 1; i < 6; ++i) CHECK(g.grad(pred).v[i] == doctest::Approx(0.0));
}

TEST_CASE("backward before forward is an error; shape mismatches throw") {
  Graph g;
  NodeId x = g.input(1, 2);
  NodeId root = g.sum_all(g.square_(x));
  g.set_value(x, Tensor2(1, 2, {1, 2}));
  CHECK_THROWS_AS(g.backward(root), std::logic_error);
  NodeId y = g.input(2, 2);
  CHECK_THROWS_AS(g.add(x, y), std::invalid_argument);
  CHECK_THROWS_AS(g.matmul(x, x), std::invalid_argument);
  CHECK_THROWS_AS(g.set_value(root, Tensor2(1, 1)), std::invalid_argument);
}

namespace {

// A little graph touching every operation; the finite-difference check
// then covers all the adjoints at once.
struct MixedGraph {
  Graph g;
  NodeId leaf, weights, root;
};

MixedGraph build_mixed() {
  MixedGraph mg;
  Graph& g = mg.g;
  const int n = 3, c = 4;
  mg.leaf = g.input(n, c);
  mg.weights = g.input(1, 8);

  NodeId a = g.tanh_(mg.leaf);
  NodeId b = g.sigmoid(g.scale(mg.leaf, 0.7));
  NodeId m = g.mul(a, b);
  Tensor2 mask(n, c);
  for (std::size_t i = 0; i < mask.v.size(); ++i) mask.v[i] = (i % 3 == 0) ? 0.0 : 1.0;
  NodeId masked = g.mul_mask(m, std::move(mask));

  NodeId gathered = g.gather_rows(masked, {0, 2, 1, 2});
  NodeId scattered = g.scatter_sum_rows(gathered, {1, 0, 2, 2}, n);
  NodeId sliced = g.slice_cols(scattered, 1, 3);
  NodeId rep = g.repeat_cols(sliced, {2, 1});
  NodeId cat = g.concat_cols({rep, g.abs_(sliced)});

  // Bilinear contraction against a constant coefficient tensor.
  auto plan = std::make_shared<TpPlan>();
  plan->n_edges = n;
  plan->dim_in = 5;   // cat has 3+2 columns
  plan->dim_out = 4;  // two output slots of dimension 2
  plan->n_weights = 8;
  plan->m_stride = 10;
  plan->radius_class = {0, 1, 0};
  TpPath path;
  path.off_in = 0;
  path.dim_in = 5;
  path.mult_in = 1;
  path.off_out = 0;
  path.dim_out = 2;
  path.mult_out = 2;
  path.weight_off = 3;
  path.m_off = 0;
  path.alpha = 0.8;
  plan->paths = {path};
  plan->edge_m.resize(n * 10);
  for (std::size_t i = 0; i < plan->edge_m.size(); ++i)
    plan->edge_m[i] = std::sin(0.9 * double(i) + 0.3);
  NodeId wrows = g.concat_cols({mg.weights});
  NodeId wboth = g.tile_rows(wrows, 2);
  NodeId tp = g.tp_contract(cat, wboth, plan);

  auto mix = std::make_shared<MixPlan>();
  mix->dim_in = 4;
  mix->dim_out = 2;
  mix->n_weights = 8;
  MixBlock blk;
  blk.off_in = 0;
  blk.off_out = 0;
  blk.dim = 1;
  blk.mult_in = 2;
  blk.mult_out = 2;
  blk.weight_off = 2;
  mix->blocks = {blk};
  NodeId mixed = g.mix_blocks(tp, mg.weights, mix);

  NodeId biased = g.add_rowvec(mixed, g.slice_cols(mg.weights, 0, 2));
  NodeId norm = g.block_norm(biased, 0, 2);
  NodeId sq = g.square_(norm);
  mg.root = g.add(g.mean_all(sq), g.scale(g.sum_all(biased), 0.05));
  return mg;
}

}  // namespace

TEST_CASE("finite differences cover the whole op set") {
  MixedGraph mg = build_mixed();
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gauss;
  Tensor2 x(3, 4), w(1, 8);
  for (double& v : x.v) v = gauss(rng);
  for (double& v : w.v) v = gauss(rng);
  mg.g.set_value(mg.leaf, x);
  mg.g.set_value(mg.weights, w);
  CHECK(grad_check(mg.g, mg.root, mg.leaf, 12, 1e-6, rng) < 1e-6);
  CHECK(grad_check(mg.g, mg.root, mg.weights, 8, 1e-6, rng) < 1e-6);
}

TEST_CASE("gradient linearity and bitwise determinism") {
  auto run = [](double alpha, double beta, std::vector<double>* grad_out) {
    Graph g;
    NodeId x = g.input(1, 4);
    NodeId l1 = g.mean_all(g.square_(x));
    NodeId l2 = g.sum_all(g.mul(x, x));
    NodeId root = g.add(g.scale(l1, alpha), g.scale(l2, beta));
    g.set_value(x, Tensor2(1, 4, {0.3, -0.7, 1.1, 0.2}));
    double v = g.forward(root);
    g.backward(root);
    *grad_out = g.grad(x).v;
    return v;
  };
  std::vector<double> g1, g2, gsum;
  run(1.0, 0.0, &g1);
  run(0.0, 1.0, &g2);
  run(0.25, -1.5, &gsum);
  for (int i = 0; i < 4; ++i)
    CHECK(gsum[i] == doctest::Approx(0.25 * g1[i] - 1.5 * g2[i]).epsilon(1e-12));

  std::vector<double> a, b;
  double va = run(0.7, 0.3, &a);
  double vb = run(0.7, 0.3, &b);
  CHECK(va == vb);  // bitwise
  for (int i = 0; i < 4; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("dead leaves get exactly zero gradient; abs subgradient at 0") {
  Graph g;
  NodeId x = g.input(1, 2);
  NodeId dead = g.input(1, 2);
  NodeId root = g.sum_all(g.square_(x));
  g.set_value(x, Tensor2(1, 2, {1.0, 2.0}));
  g.set_value(dead, Tensor2(1, 2, {5.0, 5.0}));
  g.forward(root);
  g.backward(root);
  CHECK(g.grad(dead).v[0] == 0.0);
  CHECK(g.grad(dead).v[1] == 0.0);

  Graph h;
  NodeId y = h.input(1, 3);
  NodeId r = h.sum_all(h.abs_(y));
  h.set_value(y, Tensor2(1, 3, {0.0, -2.0, 3.0}));
  h.forward(r);
  h.backward(r);
  CHECK(h.grad(y).v[0] == 0.0);  // subgradient 0 at 0
  CHECK(h.grad(y).v[1] == -1.0);
  CHECK(h.grad(y).v[2] == 1.0);
}
