#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "opnet/network.hpp"
#include "opnet/scenarios.hpp"
#include "opnet/training.hpp"

using namespace opnet;

namespace {

Structure square_structure() {
  Structure s;
  s.positions = {{1, 1, 0}, {-1, 1, 0}, {-1, -1, 0}, {1, -1, 0}};
  s.species = {0, 0, 0, 0};
  s.species_names = {"P"};
  return s;
}

ModelSpec small_spec(int n_species, double r_cut, const IrrepsSignature& slot) {
  ModelSpec spec;
  spec.n_layers = 2;
  spec.hidden_mult = 2;
  spec.hidden_lmax = 3;
  spec.filter_lmax = 3;
  spec.out_lmax = 5;
  spec.n_species = n_species;
  spec.r_cut = r_cut;
  spec.slot_sig = slot;
  spec.seed = 77;
  return spec;
}

double rel_err(const Tensor2& a, const Tensor2& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a.v[i] - b.v[i];
    num += d * d;
    den += b.v[i] * b.v[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

}  // namespace

TEST_CASE("neighbor_list basics") {
  Structure two;
  two.positions = {{0, 0, 0}, {1, 0, 0}};
  two.species = {0, 0};
  two.species_names = {"P"};
  CHECK(neighbor_list(two, 0.5).empty());
  CHECK(neighbor_list(two, 1.0).size() == 2);  // both directions

  // Square with r_cut 2.5: the two edges at distance 2 count, the diagonal
  // at 2*sqrt(2) does not, so each vertex has two neighbors.
  Structure sq = square_structure();
  std::vector<Edge> edges = neighbor_list(sq, 2.5);
  CHECK(edges.size() == 8);
  std::vector<int> degree(4, 0);
  for (const Edge& e : edges) {
    ++degree[e.center];
    CHECK(e.dr.norm() == doctest::Approx(2.0));
  }
  for (int d : degree) CHECK(d == 2);

  CHECK_THROWS_AS(neighbor_list(sq, -1.0), std::invalid_argument);
}

TEST_CASE("neighbor_list periodic minimum image") {
  Structure perov = make_perovskite_structure();
  std::vector<Edge> edges = neighbor_list(perov, 0.6);
  // Every B site has exactly 6 X neighbors at distance 0.5.
  for (int i = 0; i < perov.size(); ++i) {
    if (perov.species[i] != 1) continue;
    int count = 0;
    for (const Edge& e : edges)
      if (e.center == i) {
        CHECK(perov.species[e.neighbor] == 2);
        CHECK(e.dr.norm() == doctest::Approx(0.5));
        ++count;
      }
    CHECK(count == 6);
  }
  // Minimum-image bound: half the shortest lattice vector is 1.
  CHECK_THROWS_AS(neighbor_list(perov, 1.2), std::invalid_argument);
}

TEST_CASE("radial_basis cutoff, peaks, coverage") {
  const int B = 10;
  const double rc = 2.0;
  std::vector<double> at_cut = radial_basis(rc, B, rc);
  for (double v : at_cut) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  for (int k = 0; k < B; ++k) {
    double center = (k + 0.5) * rc / B;
    std::vector<double> vals = radial_basis(center, B, rc);
    int argmax = 0;
    for (int i = 0; i < B; ++i)
      if (vals[i] > vals[argmax]) argmax = i;
    CHECK(argmax == k);
  }
  for (double r = 0.1 * rc; r <= 0.9 * rc; r += 0.03 * rc) {
    std::vector<double> vals = radial_basis(r, B, rc);
    double best = 0;
    for (double v : vals) {
      CHECK(v >= 0.0);
      CHECK(std::isfinite(v));
      best = std::max(best, v);
    }
    CHECK(best > 0.1);
  }
  CHECK_THROWS_AS(radial_basis(0.0, B, rc), std::invalid_argument);
  CHECK_THROWS_AS(radial_basis(2.5, B, rc), std::invalid_argument);
}

TEST_CASE("layer_forward: zeros propagate, single path lands on m=0") {
  CouplingTables tables;
  Structure pair;
  pair.positions = {{0, 0, 0}, {0, 0, 1.2}};
  pair.species = {0, 0};
  pair.species_names = {"P"};
  std::vector<Edge> edges = neighbor_list(pair, 2.0);

  for (int L : {1, 2, 3}) {
    LayerConfig cfg;
    cfg.sig_in = IrrepsSignature::parse("1x0e");
    cfg.sig_out.entries = {{1, Irrep{L, natural_parity(L)}}};
    cfg.filter_lmax = L;
    cfg.r_cut = 2.0;
    cfg.restrict_paths = {{0, L, L}};
    Layer layer = Layer::create(cfg, 5);

    Tensor2 zero(2, 1);
    Tensor2 out0 = layer_forward(layer, zero, pair, edges, tables);
    for (double v : out0.v) CHECK(v == 0.0);

    Tensor2 ones(2, 1);
    ones.v = {1.0, 1.0};
    Tensor2 out = layer_forward(layer, ones, pair, edges, tables);
    // Neighbor sits along z: every block entry off m=0 must vanish.
    for (int i = 0; i < 2; ++i)
      for (int m = -L; m <= L; ++m) {
        double v = out.at(i, m + L);
        if (m == 0)
          CHECK(std::abs(v) > 1e-12);
        else
          CHECK(std::abs(v) < 1e-12);
      }
  }
}

TEST_CASE("layer equivariance under a random rotation") {
  CouplingTables tables;
  Structure sq = square_structure();
  std::vector<Edge> edges = neighbor_list(sq, 3.5);

  LayerConfig cfg;
  cfg.sig_in = IrrepsSignature::parse("2x0e+1x1o+1x2e");
  cfg.sig_out = hidden_signature(2, 2);
  cfg.filter_lmax = 2;
  cfg.r_cut = 3.5;
  Layer layer = Layer::create(cfg, 21);

  std::mt19937_64 rng(13);
  std::normal_distribution<double> gauss;
  Tensor2 feats(4, cfg.sig_in.dim());
  for (double& v : feats.v) v = gauss(rng);

  Tensor2 base = layer_forward(layer, feats, sq, edges, tables);
  for (int trial = 0; trial < 5; ++trial) {
    GroupElement g = random_group_element(rng, true);
    Mat3 m = g.cartesian_matrix();
    Structure rotated = sq;
    for (Vec3& p : rotated.positions) p = m * p;
    std::vector<Edge> redges = neighbor_list(rotated, 3.5);

    RepBlocks rb_in = RepBlocks::build(2, g);
    RepBlocks rb_out = RepBlocks::build(2, g);
    Tensor2 rfeats(4, feats.cols), expect(4, base.cols);
    for (int i = 0; i < 4; ++i) {
      rb_in.apply(cfg.sig_in, &feats.v[std::size_t(i) * feats.cols],
                  &rfeats.v[std::size_t(i) * feats.cols]);
      rb_out.apply(cfg.sig_out, &base.v[std::size_t(i) * base.cols],
                   &expect.v[std::size_t(i) * base.cols]);
    }
    Tensor2 got = layer_forward(layer, rfeats, rotated, redges, tables);
    CHECK(rel_err(got, expect) < 1e-10);
  }
}

TEST_CASE("model_forward equivariance including inversion and composition") {
  Task task = make_square_rect_task(DeformDirection::SquareToRect);
  ModelSpec spec = small_spec(1, 3.5, task.slot_sig);
  Model model = Model::create(spec);
  CouplingTables tables;

  std::mt19937_64 rng(41);
  std::normal_distribution<double> gauss;
  Tensor2 slot(task.n_classes, task.slot_sig.dim());
  for (double& v : slot.v) v = gauss(rng);
  Tensor2 features = task_features(task, slot);

  const IrrepsSignature in_sig = model_input_signature(spec);
  const IrrepsSignature out_sig = model_output_signature(spec);
  Tensor2 base = model_forward(model, task.structure, features, tables);

  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    GroupElement g = random_group_element(rng, true);
    if (trial % 3 == 2) g = compose(g, random_group_element(rng, true));
    Mat3 m = g.cartesian_matrix();
    Structure rotated = task.structure;
    for (Vec3& p : rotated.positions) p = m * p;

    RepBlocks rb_in = RepBlocks::build(5, g);
    RepBlocks rb_out = RepBlocks::build(5, g);
    Tensor2 rfeats(features.rows, features.cols), expect(base.rows, base.cols);
    for (int i = 0; i < features.rows; ++i) {
      rb_in.apply(in_sig, &features.v[std::size_t(i) * features.cols],
                  &rfeats.v[std::size_t(i) * features.cols]);
      rb_out.apply(out_sig, &base.v[std::size_t(i) * base.cols],
                   &expect.v[std::size_t(i) * base.cols]);
    }
    Tensor2 got = model_forward(model, rotated, rfeats, tables);
    worst = std::max(worst, rel_err(got, expect));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("permuting points permutes outputs identically") {
  Task task = make_square_rect_task(DeformDirection::RectToSquare);
  ModelSpec spec = small_spec(1, 3.5, task.slot_sig);
  Model model = Model::create(spec);
  CouplingTables tables;

  Tensor2 features = task_features(task, Tensor2(task.n_classes, task.slot_sig.dim()));
  Tensor2 base = model_forward(model, task.structure, features, tables);

  const std::vector<int> perm{2, 0, 3, 1};
  Structure shuffled = task.structure;
  Tensor2 sfeats(features.rows, features.cols);
  for (int i = 0; i < 4; ++i) {
    shuffled.positions[i] = task.structure.positions[perm[i]];
    for (int c = 0; c < features.cols; ++c) sfeats.at(i, c) = features.at(perm[i], c);
  }
  Tensor2 got = model_forward(model, shuffled, sfeats, tables);
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < base.cols; ++c)
      CHECK(got.at(i, c) == doctest::Approx(base.at(perm[i], c)).epsilon(1e-12));
}

TEST_CASE("doubling hidden multiplicities keeps equivariance (smoke)") {
  Task task = make_square_rect_task(DeformDirection::SquareToRect);
  ModelSpec spec = small_spec(1, 3.5, task.slot_sig);
  spec.hidden_mult = 4;
  Model model = Model::create(spec);
  CouplingTables tables;

  Tensor2 features = task_features(task, Tensor2(task.n_classes, task.slot_sig.dim()));
  Tensor2 base = model_forward(model, task.structure, features, tables);

  std::mt19937_64 rng(7);
  GroupElement g = random_group_element(rng, true);
  Mat3 m = g.cartesian_matrix();
  Structure rotated = task.structure;
  for (Vec3& p : rotated.positions) p = m * p;
  const IrrepsSignature in_sig = model_input_signature(spec);
  const IrrepsSignature out_sig = model_output_signature(spec);
  RepBlocks rb_in = RepBlocks::build(5, g);
  RepBlocks rb_out = RepBlocks::build(5, g);
  Tensor2 rfeats(features.rows, features.cols), expect(base.rows, base.cols);
  for (int i = 0; i < features.rows; ++i) {
    rb_in.apply(in_sig, &features.v[std::size_t(i) * features.cols],
                &rfeats.v[std::size_t(i) * features.cols]);
    rb_out.apply(out_sig, &base.v[std::size_t(i) * base.cols],
                 &expect.v[std::size_t(i) * base.cols]);
  }
  Tensor2 got = model_forward(model, rotated, rfeats, tables);
  CHECK(rel_err(got, expect) < 1e-8);
}

TEST_CASE("parameter layout round trip through a graph") {
  Task task = make_square_rect_task(DeformDirection::SquareToRect);
  ModelSpec spec = small_spec(1, 3.5, task.slot_sig);
  Model model = Model::create(spec);
  CHECK(model.param_count() == compute_param_layout(spec).total);

  CouplingTables tables;
  Graph g;
  NodeId feats = g.input(4, model_input_signature(spec).dim());
  ModelGraphRefs refs = build_model_graph(g, spec, task.structure, feats, tables);
  load_params(g, refs, model.params);
  std::vector<double> back = extract_params(g, refs);
  REQUIRE(back.size() == model.params.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == model.params[i]);
}

TEST_CASE("full model gradient agrees with finite differences") {
  Task task = make_square_rect_task(DeformDirection::RectToSquare);
  ModelSpec spec = small_spec(1, 3.5, task.slot_sig);
  spec.n_layers = 2;
  Model model = Model::create(spec);
  CouplingTables tables;

  Graph g;
  NodeId slot = g.input(task.n_classes, task.slot_sig.dim());
  NodeId species = g.constant(task.species_features);
  std::vector<int> site_rows(task.tie_class.begin(), task.tie_class.end());
  NodeId scattered =
      g.scatter_sum_rows(g.gather_rows(slot, site_rows), task.slot_sites, 4);
  NodeId features = g.concat_cols({species, scattered});
  ModelGraphRefs refs = build_model_graph(g, spec, task.structure, features, tables);
  NodeId target = g.constant(task.targets);
  NodeId loss = g.mean_all(g.square_(g.add(refs.output, g.scale(target, -1.0))));

  load_params(g, refs, model.params);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  Tensor2 slot_val(task.n_classes, task.slot_sig.dim());
  for (double& v : slot_val.v) v = 0.3 * gauss(rng);
  g.set_value(slot, slot_val);

  double v1 = g.forward(loss);
  CHECK(std::isfinite(v1));
  CHECK(v1 > 0.0);

  // Weight leaves and the input leaf both pass the finite-difference check.
  CHECK(grad_check(g, loss, refs.weight_leaves[2], 20, 1e-5, rng) < 1e-5);
  CHECK(grad_check(g, loss, refs.weight_leaves.back(), 20, 1e-5, rng) < 1e-5);
  CHECK(grad_check(g, loss, slot, 20, 1e-5, rng) < 1e-5);
}
