#include <benchmark/benchmark.h>

#include <random>

#include "opnet/harmonics.hpp"
#include "opnet/network.hpp"
#include "opnet/scenarios.hpp"
#include "opnet/symmetry.hpp"
#include "opnet/training.hpp"

using namespace opnet;

static void BM_EvalSh(benchmark::State& state) {
  const int lmax = static_cast<int>(state.range(0));
  Vec3 dir = Vec3{0.3, -0.5, 0.9}.normalized();
  for (auto _ : state) {
    GeometricTensor t = eval_sh(lmax, dir);
    benchmark::DoNotOptimize(t.coeffs.data());
  }
}
BENCHMARK(BM_EvalSh)->Arg(5)->Arg(10);

static void BM_WignerD(benchmark::State& state) {
  const int l = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  GroupElement g = random_group_element(rng, false);
  for (auto _ : state) {
    DMatrix d = wigner_D(l, g);
    benchmark::DoNotOptimize(d.a.data());
  }
}
BENCHMARK(BM_WignerD)->Arg(2)->Arg(5)->Arg(10);

static void BM_Wigner3jTable(benchmark::State& state) {
  const int l = static_cast<int>(state.range(0));
  for (auto _ : state) {
    Wigner3j w = wigner_3j(l, l, 2 * l > 12 ? 12 - l : 2 * l);
    benchmark::DoNotOptimize(w.c.data());
  }
}
BENCHMARK(BM_Wigner3jTable)->Arg(2)->Arg(5);

namespace {

struct TrainFixture {
  Task task;
  Model model;
  CouplingTables tables;

  explicit TrainFixture(bool perovskite) {
    if (perovskite) {
      task = make_perovskite_task({}, false);
    } else {
      task = make_square_rect_task(DeformDirection::RectToSquare);
    }
    ModelSpec spec;
    spec.slot_sig = task.slot_sig;
    spec.n_species = task.n_species;
    spec.r_cut = perovskite ? 0.6 : 3.5;
    spec.seed = 3;
    model = Model::create(spec);
  }
};

}  // namespace

static void BM_TrainStep(benchmark::State& state) {
  TrainFixture fx(state.range(0) == 1);
  TrainConfig cfg;
  cfg.steps = 1;
  for (auto _ : state) {
    Model m = fx.model;
    TrainResult r = train(m, fx.task, cfg, fx.tables);
    benchmark::DoNotOptimize(r.final_loss);
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_ModelForward(benchmark::State& state) {
  TrainFixture fx(state.range(0) == 1);
  Tensor2 features =
      task_features(fx.task, Tensor2(fx.task.n_classes, fx.task.slot_sig.dim()));
  for (auto _ : state) {
    Tensor2 out = model_forward(fx.model, fx.task.structure, features, fx.tables);
    benchmark::DoNotOptimize(out.v.data());
  }
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_Stabilizer384(benchmark::State& state) {
  Structure perov = make_perovskite_structure();
  CandidateGroup group = CandidateGroup::cubic_with_half_translations(*perov.lattice);
  group.validate_closure();
  TensorField field{perov, IrrepsSignature::parse("1x0e"), Tensor2(perov.size(), 1)};
  for (int i = 0; i < perov.size(); ++i) field.values.at(i, 0) = perov.species[i];
  for (auto _ : state) {
    StabilizerReport report = stabilizer(field, group, 1e-6);
    benchmark::DoNotOptimize(report.elements.data());
  }
}
BENCHMARK(BM_Stabilizer384)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
