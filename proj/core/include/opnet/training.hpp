#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "opnet/network.hpp"
#include "opnet/structure.hpp"

namespace opnet {

enum class Sharing { Global, PerSite, Custom };

// One supervised fitting problem: a structure, per-point input features
// with an optional order-parameter slot, and per-point target signals.
struct Task {
  std::string name;
  Structure structure;
  Tensor2 species_features;  // n x n_species one-hot scalars
  int n_species = 1;

  IrrepsSignature slot_sig;        // empty -> no order-parameter slot
  std::vector<int> slot_sites;     // sites carrying the slot
  Sharing sharing = Sharing::Global;
  std::vector<int> tie_class;      // per slot site; filled by finalize()
  int n_classes = 0;
  std::vector<double> component_mask;  // per slot column; empty -> all ones

  Tensor2 targets;  // n x (out_lmax+1)^2
  int out_lmax = 5;
  double lambda_sparsity = 1e-2;
  double lambda_degree = 0.0;

  // Fills tie classes from the sharing mode and checks invariants.
  void finalize();
};

// Scalar loss surfaces. mse_loss is invariant under simultaneous rotation
// of prediction and target; the penalties act on the slot values only.
double mse_loss(const Tensor2& pred, const Tensor2& target);
double sparsity_loss(const GeometricTensor& order_params, double lambda);
double degree_penalty(const GeometricTensor& order_params, double lambda);

struct TrainConfig {
  int steps = 5000;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  bool stop_at_plateau = false;
  double plateau_rel = 1e-4;
  int plateau_patience = 300;
  int block_model_steps = 200;
  int block_input_steps = 200;
  int max_blocks = 50;
  int block_patience = 5;     // early stop when blocks stop improving
  double mse_target = 2e-4;
  double divergence_factor = 1e6;  // abort when loss explodes or turns non-finite
};

struct TrainResult {
  std::vector<double> loss_history;
  std::vector<double> mse_history;
  double final_loss = 0.0, final_mse = 0.0;
  bool diverged = false;
  int steps_run = 0;
  Tensor2 predictions;
};

// Gradient-descent training of the model weights; the order-parameter slot
// stays at zero. Deterministic given the seed baked into the model.
TrainResult train(Model& model, const Task& task, const TrainConfig& cfg);
TrainResult train(Model& model, const Task& task, const TrainConfig& cfg,
                  CouplingTables& tables);

struct DiscoveryResult {
  Tensor2 order_params;  // n_classes x slot dim
  std::vector<double> phase_a_loss, phase_a_mse;
  std::vector<double> model_phase_loss, model_phase_mse;
  std::vector<double> input_phase_loss, input_phase_mse;
  double final_loss = 0.0, final_mse = 0.0;
  double phase_a_final_mse = 0.0;
  bool diverged = false;
  int blocks_run = 0;
  Tensor2 phase_a_predictions;
  Tensor2 final_predictions;
  Tensor2 order_params_after_first_block;
  Tensor2 input_gradient_at_plateau;  // d mse / d slot at the end of phase A
};

// Trains normally until the loss plateaus, then alternates between model
// and input updates. Input updates follow the gradient of the data term
// with the L1 penalties applied proximally, so unused slot components come
// back to exact zeros.
DiscoveryResult discover_order_parameters(Model& model, const Task& task,
                                          const TrainConfig& cfg);
DiscoveryResult discover_order_parameters(Model& model, const Task& task,
                                          const TrainConfig& cfg, CouplingTables& tables);

// Convenience: assembled input features (species one-hot + slot rows) for
// given slot class values.
Tensor2 task_features(const Task& task, const Tensor2& slot_values);

struct MagnitudeRow {
  int site_class = 0;
  int l = 0;
  Parity parity = Parity::Even;
  int m = 0;
  double value = 0.0;
};
std::vector<MagnitudeRow> magnitude_table(const Task& task, const Tensor2& order_params);

// Per-column L1 weights used by the proximal input step (lambda_sparsity
// on every L>0 component plus lambda_degree * L).
std::vector<double> slot_l1_weights(const Task& task);

}  // namespace opnet
