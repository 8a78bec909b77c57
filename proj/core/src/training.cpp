#include "opnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace opnet {

double mse_loss(const Tensor2& pred, const Tensor2& target) {
  if (pred.rows != target.rows || pred.cols != target.cols)
    throw std::invalid_argument("mse_loss shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = pred.v[i] - target.v[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

namespace {

// Per-component degree of a signature, in layout order.
std::vector<int> component_degrees(const IrrepsSignature& sig) {
  std::vector<int> out;
  for (const auto& e : sig.entries)
    for (int u = 0; u < e.mult; ++u)
      for (int m = 0; m < e.ir.dim(); ++m) out.push_back(e.ir.l);
  return out;
}

}  // namespace

double sparsity_loss(const GeometricTensor& order_params, double lambda) {
  if (lambda < 0) throw std::invalid_argument("lambda must be non-negative");
  std::vector<int> deg = component_degrees(order_params.sig);
  double s = 0;
  for (std::size_t i = 0; i < order_params.coeffs.size(); ++i)
    if (deg[i] > 0) s += std::abs(order_params.coeffs[i]);
  return lambda * s;
}

double degree_penalty(const GeometricTensor& order_params, double lambda) {
  if (lambda < 0) throw std::invalid_argument("lambda must be non-negative");
  std::vector<int> deg = component_degrees(order_params.sig);
  double s = 0;
  for (std::size_t i = 0; i < order_params.coeffs.size(); ++i)
    s += deg[i] * std::abs(order_params.coeffs[i]);
  return lambda * s;
}

std::vector<double> slot_l1_weights(const Task& task) {
  std::vector<int> deg = component_degrees(task.slot_sig);
  std::vector<double> w(deg.size());
  for (std::size_t i = 0; i < deg.size(); ++i)
    w[i] = (deg[i] > 0 ? task.lambda_sparsity : 0.0) + task.lambda_degree * deg[i];
  return w;
}

Tensor2 task_features(const Task& task, const Tensor2& slot_values) {
  const int n = task.structure.size();
  const int slot_dim = task.slot_sig.dim();
  Tensor2 features(n, task.n_species + slot_dim);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < task.n_species; ++c)
      features.at(i, c) = task.species_features.at(i, c);
  if (slot_dim > 0 && slot_values.size() > 0) {
    if (slot_values.cols != slot_dim || slot_values.rows != task.n_classes)
      throw std::invalid_argument("slot value shape mismatch");
    for (std::size_t k = 0; k < task.slot_sites.size(); ++k) {
      const int site = task.slot_sites[k];
      const int cls = task.tie_class[k];
      for (int c = 0; c < slot_dim; ++c) {
        double mask = task.component_mask.empty() ? 1.0 : task.component_mask[c];
        features.at(site, task.n_species + c) = mask * slot_values.at(cls, c);
      }
    }
  }
  return features;
}

std::vector<MagnitudeRow> magnitude_table(const Task& task, const Tensor2& order_params) {
  std::vector<MagnitudeRow> rows;
  for (int cls = 0; cls < order_params.rows; ++cls) {
    int col = 0;
    for (const auto& e : task.slot_sig.entries)
      for (int u = 0; u < e.mult; ++u)
        for (int m = -e.ir.l; m <= e.ir.l; ++m) {
          rows.push_back({cls, e.ir.l, e.ir.parity, m, order_params.at(cls, col)});
          ++col;
        }
  }
  return rows;
}

namespace {

struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  long t = 0;

  explicit Adam(std::size_t n, double lr_) : lr(lr_), m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& x, const std::vector<double>& g) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1 * m[i] + (1 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }

  // Adam step on the smooth part followed by soft-thresholding with the
  // L1 weights scaled into the same preconditioned metric; components with
  // no data gradient come back to exact zero.
  void step_prox(std::vector<double>& x, const std::vector<double>& g,
                 const std::vector<double>& l1, int stride) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1 * m[i] + (1 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
      const double denom = std::sqrt(v[i] / bc2) + eps;
      double xi = x[i] - lr * (m[i] / bc1) / denom;
      const double thresh = lr * l1[i % stride] / denom;
      if (xi > thresh)
        xi -= thresh;
      else if (xi < -thresh)
        xi += thresh;
      else
        xi = 0.0;
      x[i] = xi;
    }
  }
};

struct TaskGraph {
  Graph g;
  ModelGraphRefs refs;
  NodeId slot_leaf = -1;
  NodeId pred = -1;
  NodeId mse = -1;
  NodeId total = -1;
};

TaskGraph build_task_graph(const Model& model, const Task& task, CouplingTables& tables) {
  if (!(model.spec.slot_sig == task.slot_sig))
    throw std::invalid_argument("model slot signature does not match the task");
  if (model.spec.n_species != task.n_species)
    throw std::invalid_argument("model species channels do not match the task");
  if (model.spec.out_lmax != task.out_lmax)
    throw std::invalid_argument("model output ladder does not match the task");

  TaskGraph tg;
  Graph& g = tg.g;
  const int n = task.structure.size();
  const int slot_dim = task.slot_sig.dim();

  NodeId species = g.constant(task.species_features);
  NodeId features;
  if (slot_dim > 0) {
    tg.slot_leaf = g.input(task.n_classes, slot_dim);
    NodeId slot = tg.slot_leaf;
    if (!task.component_mask.empty()) {
      Tensor2 mask(task.n_classes, slot_dim);
      for (int r = 0; r < task.n_classes; ++r)
        for (int c = 0; c < slot_dim; ++c) mask.at(r, c) = task.component_mask[c];
      slot = g.mul_mask(slot, std::move(mask));
    }
    std::vector<int> site_rows(task.tie_class.begin(), task.tie_class.end());
    NodeId per_site = g.gather_rows(slot, site_rows);
    NodeId scattered = g.scatter_sum_rows(per_site, task.slot_sites, n);
    features = g.concat_cols({species, scattered});
  } else {
    features = species;
  }

  tg.refs = build_model_graph(g, model.spec, task.structure, features, tables);
  tg.pred = tg.refs.output;
  NodeId target = g.constant(task.targets);
  tg.mse = g.mean_all(g.square_(g.add(tg.pred, g.scale(target, -1.0))));

  NodeId total = tg.mse;
  if (slot_dim > 0) {
    std::vector<int> deg = component_degrees(task.slot_sig);
    Tensor2 sw(task.n_classes, slot_dim), dw(task.n_classes, slot_dim);
    for (int r = 0; r < task.n_classes; ++r)
      for (int c = 0; c < slot_dim; ++c) {
        sw.at(r, c) = deg[c] > 0 ? task.lambda_sparsity : 0.0;
        dw.at(r, c) = task.lambda_degree * deg[c];
      }
    NodeId absval = g.abs_(tg.slot_leaf);
    NodeId sparsity = g.sum_all(g.mul_mask(absval, std::move(sw)));
    NodeId degree = g.sum_all(g.mul_mask(absval, std::move(dw)));
    total = g.add(total, g.add(sparsity, degree));
  }
  tg.total = total;

  load_params(g, tg.refs, model.params);
  if (tg.slot_leaf >= 0) g.set_value(tg.slot_leaf, Tensor2(task.n_classes, slot_dim));
  return tg;
}

struct PlateauTracker {
  double best = 1e300;
  int stale = 0;
  double rel;
  int patience;

  PlateauTracker(double rel_, int patience_) : rel(rel_), patience(patience_) {}

  bool update(double loss) {
    if (loss < best * (1.0 - rel)) {
      best = loss;
      stale = 0;
    } else {
      best = std::min(best, loss);
      ++stale;
    }
    return stale >= patience;
  }
};

}  // namespace

TrainResult train(Model& model, const Task& task, const TrainConfig& cfg,
                  CouplingTables& tables) {
  TaskGraph tg = build_task_graph(model, task, tables);
  Graph& g = tg.g;

  TrainResult result;
  Adam opt(model.params.size(), cfg.lr);
  PlateauTracker plateau(cfg.plateau_rel, cfg.plateau_patience);
  double initial_loss = -1.0;

  for (int step = 0; step < cfg.steps; ++step) {
    double loss = g.forward(tg.total);
    double mse = g.value(tg.mse).v[0];
    if (!std::isfinite(loss) ||
        (initial_loss > 0 && loss > cfg.divergence_factor * std::max(initial_loss, 1e-12))) {
      result.diverged = true;
      break;
    }
    if (initial_loss < 0) initial_loss = loss;
    result.loss_history.push_back(loss);
    result.mse_history.push_back(mse);
    g.backward(tg.total);
    std::vector<double> grads = collect_param_grads(g, tg.refs);
    opt.step(model.params, grads);
    load_params(g, tg.refs, model.params);
    ++result.steps_run;
    if (cfg.stop_at_plateau && plateau.update(loss)) break;
  }
  result.final_loss = g.forward(tg.total);
  result.final_mse = g.value(tg.mse).v[0];
  result.predictions = g.value(tg.pred);
  return result;
}

TrainResult train(Model& model, const Task& task, const TrainConfig& cfg) {
  CouplingTables tables;
  return train(model, task, cfg, tables);
}

DiscoveryResult discover_order_parameters(Model& model, const Task& task,
                                          const TrainConfig& cfg, CouplingTables& tables) {
  if (task.slot_sig.entries.empty())
    throw std::invalid_argument("discovery needs an order-parameter slot");
  TaskGraph tg = build_task_graph(model, task, tables);
  Graph& g = tg.g;
  const int slot_dim = task.slot_sig.dim();

  DiscoveryResult result;
  Tensor2 slot(task.n_classes, slot_dim);  // initialized to zero
  std::vector<double> slot_flat = slot.v;

  Adam opt_model(model.params.size(), cfg.lr);
  Adam opt_input(slot_flat.size(), cfg.lr);
  std::vector<double> l1 = slot_l1_weights(task);

  double initial_loss = -1.0;
  auto diverged = [&](double loss) {
    return !std::isfinite(loss) ||
           (initial_loss > 0 && loss > cfg.divergence_factor * std::max(initial_loss, 1e-12));
  };

  // Phase A: model-only training until the loss stops improving.
  PlateauTracker plateau(cfg.plateau_rel, cfg.plateau_patience);
  for (int step = 0; step < cfg.steps; ++step) {
    double loss = g.forward(tg.total);
    if (diverged(loss)) {
      result.diverged = true;
      break;
    }
    if (initial_loss < 0) initial_loss = loss;
    result.phase_a_loss.push_back(loss);
    result.phase_a_mse.push_back(g.value(tg.mse).v[0]);
    g.backward(tg.total);
    opt_model.step(model.params, collect_param_grads(g, tg.refs));
    load_params(g, tg.refs, model.params);
    if (plateau.update(loss)) break;
  }
  g.forward(tg.mse);
  result.phase_a_final_mse = g.value(tg.mse).v[0];
  result.phase_a_predictions = g.value(tg.pred);
  g.backward(tg.mse);
  result.input_gradient_at_plateau = g.grad(tg.slot_leaf);

  // Alternating blocks: model steps on the full loss, input steps on the
  // data term with proximal L1 shrinkage.
  double best_block_mse = 1e300;
  int stale_blocks = 0;
  for (int block = 0; block < cfg.max_blocks && !result.diverged; ++block) {
    for (int step = 0; step < cfg.block_model_steps; ++step) {
      double loss = g.forward(tg.total);
      if (diverged(loss)) {
        result.diverged = true;
        break;
      }
      result.model_phase_loss.push_back(loss);
      result.model_phase_mse.push_back(g.value(tg.mse).v[0]);
      g.backward(tg.total);
      opt_model.step(model.params, collect_param_grads(g, tg.refs));
      load_params(g, tg.refs, model.params);
    }
    for (int step = 0; step < cfg.block_input_steps && !result.diverged; ++step) {
      double mse = g.forward(tg.mse);
      if (diverged(mse)) {
        result.diverged = true;
        break;
      }
      g.backward(tg.mse);
      opt_input.step_prox(slot_flat, g.grad(tg.slot_leaf).v, l1, slot_dim);
      g.set_value(tg.slot_leaf, Tensor2(task.n_classes, slot_dim, slot_flat));
      double total = g.forward(tg.total);
      result.input_phase_loss.push_back(total);
      result.input_phase_mse.push_back(g.value(tg.mse).v[0]);
    }
    result.blocks_run = block + 1;
    if (block == 0)
      result.order_params_after_first_block = Tensor2(task.n_classes, slot_dim, slot_flat);

    double mse_now = g.forward(tg.mse);
    if (mse_now < cfg.mse_target) break;
    if (mse_now < best_block_mse * (1.0 - cfg.plateau_rel)) {
      best_block_mse = mse_now;
      stale_blocks = 0;
    } else {
      best_block_mse = std::min(best_block_mse, mse_now);
      ++stale_blocks;
      if (stale_blocks >= cfg.block_patience) break;
    }
  }

  result.order_params = Tensor2(task.n_classes, slot_dim, slot_flat);
  result.final_loss = g.forward(tg.total);
  result.final_mse = g.value(tg.mse).v[0];
  result.final_predictions = g.value(tg.pred);
  return result;
}

DiscoveryResult discover_order_parameters(Model& model, const Task& task,
                                          const TrainConfig& cfg) {
  CouplingTables tables;
  return discover_order_parameters(model, task, cfg, tables);
}

}  // namespace opnet
