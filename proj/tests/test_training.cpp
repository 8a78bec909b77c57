#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "opnet/scenarios.hpp"
#include "opnet/symmetry.hpp"
#include "opnet/training.hpp"

using namespace opnet;

namespace {

ModelSpec tiny_spec(const Task& task, std::uint64_t seed) {
  ModelSpec spec;
  spec.n_layers = 2;
  spec.hidden_mult = 2;
  spec.hidden_lmax = 3;
  spec.filter_lmax = 3;
  spec.out_lmax = task.out_lmax;
  spec.n_species = task.n_species;
  spec.slot_sig = task.slot_sig;
  spec.r_cut = 3.5;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("loss surfaces match their closed forms") {
  Tensor2 a(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(mse_loss(a, a) == 0.0);
  Tensor2 b = a;
  b.v[4] += 1.0;
  CHECK(mse_loss(a, b) == doctest::Approx(1.0 / 6.0));
  CHECK_THROWS_AS(mse_loss(a, Tensor2(3, 2)), std::invalid_argument);

  GeometricTensor op(IrrepsSignature::parse("1x0e+1x2e"));
  CHECK(sparsity_loss(op, 0.01) == 0.0);
  op.coeffs[3] = 0.5;   // an L=2 component
  op.coeffs[0] = 9.0;   // scalar: excluded
  CHECK(sparsity_loss(op, 0.01) == doctest::Approx(0.005));
  op.coeffs[3] = -0.5;  // sign flip invariance
  CHECK(sparsity_loss(op, 0.01) == doctest::Approx(0.005));

  GeometricTensor op4(IrrepsSignature::parse("1x1o+1x4e"));
  op4.coeffs[3 + 4] = 1.0;  // an L=4 component
  CHECK(degree_penalty(op4, 0.01) == doctest::Approx(0.04));
  op4.coeffs[3 + 4] = 0.0;
  op4.coeffs[0] = 1.0;  // an L=1 component: four times cheaper
  CHECK(degree_penalty(op4, 0.01) == doctest::Approx(0.01));
  CHECK_THROWS_AS(sparsity_loss(op4, -1.0), std::invalid_argument);
}

TEST_CASE("mse invariance under simultaneous rotation") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  const IrrepsSignature sig = IrrepsSignature::natural_ladder(5);
  Tensor2 pred(3, sig.dim()), target(3, sig.dim());
  for (double& v : pred.v) v = gauss(rng);
  for (double& v : target.v) v = gauss(rng);
  double base = mse_loss(pred, target);
  for (int trial = 0; trial < 10; ++trial) {
    GroupElement g = random_group_element(rng, true);
    RepBlocks rb = RepBlocks::build(5, g);
    Tensor2 rp(3, sig.dim()), rt(3, sig.dim());
    for (int i = 0; i < 3; ++i) {
      rb.apply(sig, &pred.v[std::size_t(i) * sig.dim()], &rp.v[std::size_t(i) * sig.dim()]);
      rb.apply(sig, &target.v[std::size_t(i) * sig.dim()], &rt.v[std::size_t(i) * sig.dim()]);
    }
    CHECK(std::abs(mse_loss(rp, rt) - base) < 1e-12);
  }
}

TEST_CASE("zero-step training leaves the model bitwise unchanged") {
  Task task = make_square_rect_task(DeformDirection::RectToSquare);
  Model model = Model::create(tiny_spec(task, 5));
  std::vector<double> before = model.params;
  TrainConfig cfg;
  cfg.steps = 0;
  TrainResult res = train(model, task, cfg);
  CHECK(res.steps_run == 0);
  REQUIRE(model.params.size() == before.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(model.params[i] == before[i]);
}

TEST_CASE("short training reduces the loss deterministically") {
  Task task = make_square_rect_task(DeformDirection::RectToSquare);
  TrainConfig cfg;
  cfg.steps = 120;
  cfg.lr = 1e-2;

  Model m1 = Model::create(tiny_spec(task, 5));
  TrainResult r1 = train(m1, task, cfg);
  CHECK(!r1.diverged);
  CHECK(r1.loss_history.front() > r1.final_loss);
  CHECK(r1.final_loss < 0.5 * r1.loss_history.front());

  Model m2 = Model::create(tiny_spec(task, 5));
  TrainResult r2 = train(m2, task, cfg);
  CHECK(r1.final_loss == r2.final_loss);  // bitwise determinism
  for (std::size_t i = 0; i < m1.params.size(); ++i) CHECK(m1.params[i] == m2.params[i]);
}

TEST_CASE("divergence guard aborts exploding runs") {
  Task task = make_square_rect_task(DeformDirection::RectToSquare);
  Model model = Model::create(tiny_spec(task, 5));
  TrainConfig cfg;
  cfg.steps = 400;
  cfg.lr = 10.0;
  cfg.divergence_factor = 1e6;
  TrainResult res = train(model, task, cfg);
  CHECK(res.diverged);
  CHECK(res.steps_run < cfg.steps);
  CHECK(!res.loss_history.empty());  // partial history survives
}

TEST_CASE("task_features scatters tied slot rows with the mask applied") {
  Task task = make_perovskite_task({}, true);
  Tensor2 slot(task.n_classes, task.slot_sig.dim());
  for (int r = 0; r < slot.rows; ++r)
    for (int c = 0; c < slot.cols; ++c) slot.at(r, c) = 100.0 * r + c;
  Tensor2 features = task_features(task, slot);
  REQUIRE(features.cols == 3 + 70);

  for (std::size_t k = 0; k < task.slot_sites.size(); ++k) {
    int site = task.slot_sites[k];
    int cls = task.tie_class[k];
    // Masked x-component of 1_e (column 2) is zero; others pass through.
    CHECK(features.at(site, 3 + 2) == 0.0);
    CHECK(features.at(site, 3 + 1) == doctest::Approx(slot.at(cls, 1)));
    CHECK(features.at(site, 3 + 5) == doctest::Approx(slot.at(cls, 5)));
  }
  // Sites without slots carry zeros there.
  for (int i = 0; i < task.structure.size(); ++i) {
    if (task.structure.species[i] == 1) continue;
    for (int c = 0; c < 70; ++c) CHECK(features.at(i, 3 + c) == 0.0);
  }
}

TEST_CASE("slot_l1_weights combine sparsity and degree terms") {
  Task task = make_perovskite_task({}, false);
  std::vector<double> w = slot_l1_weights(task);
  REQUIRE(w.size() == 70);
  // First three columns are the 1_e block.
  CHECK(w[0] == doctest::Approx(task.lambda_sparsity + task.lambda_degree * 1));
  // Last column belongs to the 5_o block.
  CHECK(w[69] == doctest::Approx(task.lambda_sparsity + task.lambda_degree * 5));
}

TEST_CASE("magnitude_table layout") {
  Task task = make_square_rect_task(DeformDirection::SquareToRect);
  Tensor2 op(1, 70);
  op.at(0, 0) = 0.25;
  auto rows = magnitude_table(task, op);
  REQUIRE(rows.size() == 70);
  CHECK(rows[0].l == 1);
  CHECK(rows[0].parity == Parity::Even);
  CHECK(rows[0].m == -1);
  CHECK(rows[0].value == doctest::Approx(0.25));
  CHECK(rows[69].l == 5);
  CHECK(rows[69].parity == Parity::Odd);
  CHECK(rows[69].m == 5);
}

TEST_CASE("discovery smoke run wakes up the slot and respects the mask") {
  Task task = make_square_rect_task(DeformDirection::SquareToRect);
  task.lambda_sparsity = 1e-4;
  Model model = Model::create(tiny_spec(task, 9));
  TrainConfig cfg;
  cfg.steps = 150;
  cfg.plateau_patience = 40;
  cfg.block_model_steps = 30;
  cfg.block_input_steps = 30;
  cfg.max_blocks = 2;
  cfg.mse_target = 1e-9;  // keep both blocks running
  DiscoveryResult res = discover_order_parameters(model, task, cfg);
  CHECK(!res.diverged);
  CHECK(res.blocks_run >= 1);
  double total = 0;
  for (double v : res.order_params.v) total += std::abs(v);
  CHECK(total > 0.0);  // input phase moved the slot
  CHECK(res.order_params_after_first_block.size() == res.order_params.size());
  CHECK(res.input_gradient_at_plateau.size() == std::size_t(70));

  // The input gradient at the plateau lives in the even, mirror-compatible
  // components only (odd parity is excluded by inversion symmetry).
  const auto& grad = res.input_gradient_at_plateau;
  double odd_mass = 0, even_mass = 0;
  int col = 0;
  for (const auto& e : task.slot_sig.entries)
    for (int u = 0; u < e.mult; ++u)
      for (int m = -e.ir.l; m <= e.ir.l; ++m, ++col) {
        if (e.ir.parity == Parity::Odd)
          odd_mass += std::abs(grad.v[col]);
        else
          even_mass += std::abs(grad.v[col]);
      }
  CHECK(even_mass > 0.0);
  CHECK(odd_mass < 1e-10 * std::max(even_mass, 1.0));
}
