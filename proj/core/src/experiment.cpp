#include "opnet/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "opnet/harmonics.hpp"
#include "opnet/scenarios.hpp"
#include "opnet/symmetry.hpp"
#include "opnet/training.hpp"

namespace opnet {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

void require_keys(const json& obj, const std::string& where,
                  std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

// ---------------------------------------------------------------------------
// Configuration

struct ScenarioConfig {
  std::string id;
  int slot_lmax = 5;
  std::string pattern = "a+b-b-";
  double theta_a = 0.1, theta_b = 0.1;
  bool constrained = false;
};

struct ModelConfig {
  int layers = 3, hidden_mult = 4, hidden_lmax = 5, filter_lmax = 5;
  int radial_basis = 10, radial_hidden = 16;
  double r_cut = -1.0;  // negative: scenario default
};

struct TrainingCfg {
  std::string mode = "train";
  int steps = 5000;
  double lr = 1e-2;
  double lambda_sparsity = -1.0, lambda_degree = -1.0;  // negative: task default
  int plateau_patience = 300;
  double plateau_rel = 1e-4;
  int block_model_steps = 200, block_input_steps = 200, max_blocks = 50;
  int block_patience = 5;
  double mse_target = 2e-4;
  bool stop_at_plateau = false;
  double divergence_factor = 1e6;
};

struct ChecksConfig {
  bool equivariance = true, curie = true, combination = true, gradient_equivariance = true;
  int n_random_elements = 20;
  std::string checkpoint;
  double perturb_w3j = 0.0;
};

struct OutputConfig {
  std::string dir = "out";
  int grid_n = 64;
};

struct ExperimentConfig {
  int version = 1;
  std::uint64_t seed = 0;
  ScenarioConfig scenario;
  ModelConfig model;
  TrainingCfg training;
  ChecksConfig checks;
  OutputConfig output;
  json echo;
};

template <typename T>
void read_to(const json& obj, const char* key, T& target) {
  if (obj.contains(key)) target = obj.at(key).get<T>();
}

ExperimentConfig parse_config_json(const json& doc) {
  ExperimentConfig cfg;
  if (!doc.is_object()) throw ConfigError("config root must be an object");
  require_keys(doc, "config root",
               {"version", "seed", "scenario", "model", "training", "checks", "output"});
  if (!doc.contains("version")) throw ConfigError("missing 'version'");
  cfg.version = doc.at("version").get<int>();
  if (cfg.version != 1) throw ConfigError("unsupported config version");
  if (!doc.contains("seed")) throw ConfigError("missing 'seed'");
  cfg.seed = doc.at("seed").get<std::uint64_t>();
  if (!doc.contains("scenario")) throw ConfigError("missing 'scenario'");

  const json& sc = doc.at("scenario");
  require_keys(sc, "scenario",
               {"id", "slot_lmax", "pattern", "theta_a", "theta_b", "constrained"});
  if (!sc.contains("id")) throw ConfigError("missing scenario id");
  cfg.scenario.id = sc.at("id").get<std::string>();
  if (cfg.scenario.id != "square_to_rect" && cfg.scenario.id != "rect_to_square" &&
      cfg.scenario.id != "perovskite")
    throw ConfigError("unknown scenario id '" + cfg.scenario.id + "'");
  read_to(sc, "slot_lmax", cfg.scenario.slot_lmax);
  read_to(sc, "pattern", cfg.scenario.pattern);
  if (cfg.scenario.pattern != "a+b-b-" && cfg.scenario.pattern != "a0b-b-")
    throw ConfigError("unknown tilt pattern '" + cfg.scenario.pattern + "'");
  read_to(sc, "theta_a", cfg.scenario.theta_a);
  read_to(sc, "theta_b", cfg.scenario.theta_b);
  read_to(sc, "constrained", cfg.scenario.constrained);

  if (doc.contains("model")) {
    const json& mc = doc.at("model");
    require_keys(mc, "model",
                 {"layers", "hidden_mult", "hidden_lmax", "filter_lmax", "radial_basis",
                  "radial_hidden", "r_cut"});
    read_to(mc, "layers", cfg.model.layers);
    read_to(mc, "hidden_mult", cfg.model.hidden_mult);
    read_to(mc, "hidden_lmax", cfg.model.hidden_lmax);
    read_to(mc, "filter_lmax", cfg.model.filter_lmax);
    read_to(mc, "radial_basis", cfg.model.radial_basis);
    read_to(mc, "radial_hidden", cfg.model.radial_hidden);
    read_to(mc, "r_cut", cfg.model.r_cut);
  }
  if (doc.contains("training")) {
    const json& tc = doc.at("training");
    require_keys(tc, "training",
                 {"mode", "steps", "lr", "lambda_sparsity", "lambda_degree",
                  "plateau_patience", "plateau_rel", "block_model_steps",
                  "block_input_steps", "max_blocks", "block_patience", "mse_target",
                  "stop_at_plateau", "divergence_factor"});
    read_to(tc, "mode", cfg.training.mode);
    if (cfg.training.mode != "train" && cfg.training.mode != "discover")
      throw ConfigError("training mode must be 'train' or 'discover'");
    read_to(tc, "steps", cfg.training.steps);
    read_to(tc, "lr", cfg.training.lr);
    read_to(tc, "lambda_sparsity", cfg.training.lambda_sparsity);
    read_to(tc, "lambda_degree", cfg.training.lambda_degree);
    read_to(tc, "plateau_patience", cfg.training.plateau_patience);
    read_to(tc, "plateau_rel", cfg.training.plateau_rel);
    read_to(tc, "block_model_steps", cfg.training.block_model_steps);
    read_to(tc, "block_input_steps", cfg.training.block_input_steps);
    read_to(tc, "max_blocks", cfg.training.max_blocks);
    read_to(tc, "block_patience", cfg.training.block_patience);
    read_to(tc, "mse_target", cfg.training.mse_target);
    read_to(tc, "stop_at_plateau", cfg.training.stop_at_plateau);
    read_to(tc, "divergence_factor", cfg.training.divergence_factor);
  }
  if (doc.contains("checks")) {
    const json& cc = doc.at("checks");
    require_keys(cc, "checks",
                 {"equivariance", "curie", "combination", "gradient_equivariance",
                  "n_random_elements", "checkpoint", "perturb_w3j"});
    read_to(cc, "equivariance", cfg.checks.equivariance);
    read_to(cc, "curie", cfg.checks.curie);
    read_to(cc, "combination", cfg.checks.combination);
    read_to(cc, "gradient_equivariance", cfg.checks.gradient_equivariance);
    read_to(cc, "n_random_elements", cfg.checks.n_random_elements);
    read_to(cc, "checkpoint", cfg.checks.checkpoint);
    read_to(cc, "perturb_w3j", cfg.checks.perturb_w3j);
  }
  if (doc.contains("output")) {
    const json& oc = doc.at("output");
    require_keys(oc, "output", {"dir", "grid_n"});
    read_to(oc, "dir", cfg.output.dir);
    read_to(oc, "grid_n", cfg.output.grid_n);
  }
  cfg.echo = doc;
  return cfg;
}

ExperimentConfig load_config(const std::string& path, const CliOverrides& overrides) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig cfg = parse_config_json(doc);
  if (overrides.out_dir) cfg.output.dir = *overrides.out_dir;
  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.grid_n) cfg.output.grid_n = *overrides.grid_n;
  return cfg;
}

Task build_task(const ExperimentConfig& cfg) {
  Task task;
  if (cfg.scenario.id == "square_to_rect")
    task = make_square_rect_task(DeformDirection::SquareToRect, cfg.scenario.slot_lmax);
  else if (cfg.scenario.id == "rect_to_square")
    task = make_square_rect_task(DeformDirection::RectToSquare, cfg.scenario.slot_lmax);
  else {
    TiltSpec spec;
    spec.pattern = cfg.scenario.pattern == "a+b-b-" ? TiltSpec::Pattern::APlusBMinusBMinus
                                                    : TiltSpec::Pattern::AZeroBMinusBMinus;
    spec.theta_a = cfg.scenario.theta_a;
    spec.theta_b = cfg.scenario.theta_b;
    task = make_perovskite_task(spec, cfg.scenario.constrained);
  }
  if (cfg.training.lambda_sparsity >= 0) task.lambda_sparsity = cfg.training.lambda_sparsity;
  if (cfg.training.lambda_degree >= 0) task.lambda_degree = cfg.training.lambda_degree;
  return task;
}

double scenario_default_rcut(const std::string& id) {
  return id == "perovskite" ? 0.6 : 3.5;
}

Model build_model(const ExperimentConfig& cfg, const Task& task) {
  ModelSpec spec;
  spec.n_layers = cfg.model.layers;
  spec.hidden_mult = cfg.model.hidden_mult;
  spec.hidden_lmax = cfg.model.hidden_lmax;
  spec.filter_lmax = cfg.model.filter_lmax;
  spec.out_lmax = task.out_lmax;
  spec.n_species = task.n_species;
  spec.radial_basis_count = cfg.model.radial_basis;
  spec.radial_hidden = cfg.model.radial_hidden;
  spec.r_cut = cfg.model.r_cut > 0 ? cfg.model.r_cut : scenario_default_rcut(cfg.scenario.id);
  spec.slot_sig = task.slot_sig;
  spec.seed = splitmix64(cfg.seed + 1);  // weight sub-seed
  return Model::create(spec);
}

TrainConfig to_train_config(const TrainingCfg& t) {
  TrainConfig cfg;
  cfg.steps = t.steps;
  cfg.lr = t.lr;
  cfg.stop_at_plateau = t.stop_at_plateau;
  cfg.plateau_rel = t.plateau_rel;
  cfg.plateau_patience = t.plateau_patience;
  cfg.block_model_steps = t.block_model_steps;
  cfg.block_input_steps = t.block_input_steps;
  cfg.max_blocks = t.max_blocks;
  cfg.block_patience = t.block_patience;
  cfg.mse_target = t.mse_target;
  cfg.divergence_factor = t.divergence_factor;
  return cfg;
}

// ---------------------------------------------------------------------------
// Serialization helpers

json spec_to_json(const ModelSpec& spec) {
  json j;
  j["n_layers"] = spec.n_layers;
  j["hidden_mult"] = spec.hidden_mult;
  j["hidden_lmax"] = spec.hidden_lmax;
  j["filter_lmax"] = spec.filter_lmax;
  j["out_lmax"] = spec.out_lmax;
  j["n_species"] = spec.n_species;
  j["radial_basis"] = spec.radial_basis_count;
  j["radial_hidden"] = spec.radial_hidden;
  j["r_cut"] = spec.r_cut;
  j["slot_sig"] = spec.slot_sig.to_string();
  j["seed"] = spec.seed;
  j["input_sig"] = model_input_signature(spec).to_string();
  j["output_sig"] = model_output_signature(spec).to_string();
  return j;
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  spec.n_layers = j.at("n_layers").get<int>();
  spec.hidden_mult = j.at("hidden_mult").get<int>();
  spec.hidden_lmax = j.at("hidden_lmax").get<int>();
  spec.filter_lmax = j.at("filter_lmax").get<int>();
  spec.out_lmax = j.at("out_lmax").get<int>();
  spec.n_species = j.at("n_species").get<int>();
  spec.radial_basis_count = j.at("radial_basis").get<int>();
  spec.radial_hidden = j.at("radial_hidden").get<int>();
  spec.r_cut = j.at("r_cut").get<double>();
  std::string slot = j.at("slot_sig").get<std::string>();
  if (!slot.empty()) spec.slot_sig = IrrepsSignature::parse(slot);
  spec.seed = j.at("seed").get<std::uint64_t>();
  return spec;
}

json stabilizer_to_json(const StabilizerReport& report, const CandidateGroup& group) {
  json j;
  j["tol"] = report.tol;
  j["count"] = report.elements.size();
  json elems = json::array();
  for (std::size_t i = 0; i < report.elements.size(); ++i) {
    const SymOp& op = group.ops[report.elements[i]];
    json e;
    e["index"] = report.elements[i];
    e["axis"] = {op.g.axis.x, op.g.axis.y, op.g.axis.z};
    e["angle"] = op.g.angle;
    e["inversion"] = op.g.inversion;
    e["translation"] = {op.translation.x, op.translation.y, op.translation.z};
    e["residual"] = report.residuals[i];
    elems.push_back(e);
  }
  j["elements"] = elems;
  return j;
}

std::string magnitudes_csv(const Task& task, const Tensor2& order_params) {
  std::ostringstream os;
  os << "site,L,parity,m,value\n";
  os.precision(17);
  for (const MagnitudeRow& row : magnitude_table(task, order_params))
    os << row.site_class << "," << row.l << "," << (row.parity == Parity::Even ? "e" : "o")
       << "," << row.m << "," << row.value << "\n";
  return os.str();
}

std::string signal_csv(const GeometricTensor& signal, const SphereGrid& grid) {
  std::ostringstream os;
  os << "theta,phi,value\n";
  os.precision(17);
  std::vector<double> values = sample_signal(signal, grid);
  for (int j = 0; j < grid.n_theta; ++j)
    for (int k = 0; k < grid.n_phi; ++k)
      os << grid.thetas[j] << "," << grid.phis[k] << "," << values[grid.index(j, k)] << "\n";
  return os.str();
}

GeometricTensor row_signal(const Tensor2& rows, int i, int lmax) {
  GeometricTensor t(IrrepsSignature::natural_ladder(lmax));
  for (int c = 0; c < rows.cols; ++c) t.coeffs[c] = rows.at(i, c);
  return t;
}

class OutputWriter {
 public:
  explicit OutputWriter(const std::string& dir) : dir_(dir) {
    fs::create_directories(dir_);
    fs::create_directories(dir_ + "/signals");
  }

  void write(const std::string& rel, const std::string& content) {
    write_file(dir_ + "/" + rel, content);
    json e;
    e["path"] = rel;
    e["bytes"] = content.size();
    std::ostringstream h;
    h << "fnv1a64:" << std::hex << fnv1a64(content);
    e["hash"] = h.str();
    files_.push_back(e);
  }

  void finish() {
    json manifest;
    manifest["files"] = files_;
    write_file(dir_ + "/manifest.json", manifest.dump(2) + "\n");
  }

 private:
  std::string dir_;
  json files_ = json::array();
};

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  json j;
  j["format"] = "opnet-ckpt-1";
  j["spec"] = spec_to_json(model.spec);
  j["param_count"] = model.params.size();
  j["params"] = model.params;
  write_file(path, j.dump() + "\n");
}

Model load_checkpoint(const std::string& path) {
  json j = json::parse(read_file(path));
  if (j.at("format").get<std::string>() != "opnet-ckpt-1")
    throw ConfigError("unknown checkpoint format");
  Model m;
  m.spec = spec_from_json(j.at("spec"));
  m.params = j.at("params").get<std::vector<double>>();
  if (m.params.size() != j.at("param_count").get<std::size_t>() ||
      static_cast<int>(m.params.size()) != compute_param_layout(m.spec).total)
    throw ConfigError("checkpoint parameter count mismatch");
  return m;
}

// ---------------------------------------------------------------------------
// run pipeline

namespace {

CandidateGroup scenario_group(const Task& task) {
  if (task.structure.lattice)
    return CandidateGroup::cubic_with_half_translations(*task.structure.lattice);
  return CandidateGroup::cubic48();
}

json run_and_collect(const ExperimentConfig& cfg, Task& task, Model& model, bool* diverged) {
  json out;
  TrainConfig tc = to_train_config(cfg.training);
  CouplingTables tables;
  CandidateGroup group = scenario_group(task);

  const IrrepsSignature in_sig = model_input_signature(model.spec);
  const IrrepsSignature out_sig = model_output_signature(model.spec);

  auto input_field = [&](const Tensor2& slot) {
    return TensorField{task.structure, in_sig, task_features(task, slot)};
  };

  Tensor2 zero_slot(task.n_classes, task.slot_sig.dim());
  json stab;
  stab["input_before"] =
      stabilizer_to_json(stabilizer(input_field(zero_slot), group, 1e-6), group);

  if (cfg.training.mode == "train") {
    TrainResult res = train(model, task, tc, tables);
    *diverged = res.diverged;
    out["mode"] = "train";
    out["loss_history"] = res.loss_history;
    out["mse_history"] = res.mse_history;
    out["final_loss"] = res.final_loss;
    out["final_mse"] = res.final_mse;
    out["steps_run"] = res.steps_run;
    out["diverged"] = res.diverged;
    if (!res.diverged) {
      TensorField pred_field{task.structure, out_sig, res.predictions};
      stab["output"] = stabilizer_to_json(stabilizer(pred_field, group, 1e-3), group);
      json peaks = json::array();
      for (int i = 0; i < res.predictions.rows; ++i) {
        json site_peaks = json::array();
        for (const Vec3& p :
             peak_vectors(row_signal(res.predictions, i, task.out_lmax), SphereGrid::standard()))
          site_peaks.push_back({p.x, p.y, p.z});
        peaks.push_back(site_peaks);
      }
      out["peaks"] = peaks;
      out["predictions_rows"] = res.predictions.rows;
    }
    out["predictions"] = res.predictions.v;
  } else {
    DiscoveryResult res = discover_order_parameters(model, task, tc, tables);
    *diverged = res.diverged;
    out["mode"] = "discover";
    out["phase_a_loss"] = res.phase_a_loss;
    out["phase_a_mse"] = res.phase_a_mse;
    out["model_phase_loss"] = res.model_phase_loss;
    out["model_phase_mse"] = res.model_phase_mse;
    out["input_phase_loss"] = res.input_phase_loss;
    out["input_phase_mse"] = res.input_phase_mse;
    out["final_loss"] = res.final_loss;
    out["final_mse"] = res.final_mse;
    out["phase_a_final_mse"] = res.phase_a_final_mse;
    out["blocks_run"] = res.blocks_run;
    out["diverged"] = res.diverged;
    out["order_params"] = res.order_params.v;
    out["order_params_rows"] = res.order_params.rows;
    out["order_params_cols"] = res.order_params.cols;
    out["predictions"] = res.final_predictions.v;
    if (!res.diverged) {
      stab["input_after"] =
          stabilizer_to_json(stabilizer(input_field(res.order_params), group, 1e-3), group);
      TensorField pred_field{task.structure, out_sig, res.final_predictions};
      stab["output"] = stabilizer_to_json(stabilizer(pred_field, group, 1e-3), group);
    }
  }
  out["stabilizers"] = stab;
  out["lambda_sparsity"] = task.lambda_sparsity;
  out["lambda_degree"] = task.lambda_degree;
  return out;
}

}  // namespace

int run_experiment(const std::string& config_path, const CliOverrides& overrides,
                   std::string* error_message) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path, overrides);
  } catch (const ConfigError& e) {
    if (error_message) *error_message = e.what();
    return kExitConfigError;
  }
  try {
    Task task = build_task(cfg);
    Model model = build_model(cfg, task);

    const auto t0 = std::chrono::steady_clock::now();
    bool diverged = false;
    json results = run_and_collect(cfg, task, model, &diverged);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    OutputWriter writer(cfg.output.dir);
    json top;
    top["config"] = cfg.echo;
    top["seed"] = cfg.seed;
    top["scenario"] = cfg.scenario.id;
    top["elapsed_seconds"] = seconds;
    top["results"] = results;
    writer.write("results.json", top.dump(2) + "\n");

    if (!diverged) {
      // Recovered order parameters (zero matrix in train mode).
      Tensor2 op(task.n_classes, task.slot_sig.dim());
      if (results.contains("order_params"))
        op = Tensor2(results["order_params_rows"].get<int>(),
                     results["order_params_cols"].get<int>(),
                     results["order_params"].get<std::vector<double>>());
      writer.write("magnitudes.csv", magnitudes_csv(task, op));

      SphereGrid grid = SphereGrid::build(cfg.output.grid_n);
      Tensor2 preds(task.structure.size(), (task.out_lmax + 1) * (task.out_lmax + 1),
                    results["predictions"].get<std::vector<double>>());
      for (int i = 0; i < preds.rows; ++i) {
        std::ostringstream name;
        name << "signals/point_" << i << ".csv";
        writer.write(name.str(), signal_csv(row_signal(preds, i, task.out_lmax), grid));
      }
      std::ostringstream ckpt;
      save_checkpoint(model, cfg.output.dir + "/model.ckpt");
      writer.write("structure.xyz", structure_to_xyz(task.structure));
    }
    writer.finish();
    return diverged ? kExitDiverged : kExitOk;
  } catch (const std::exception& e) {
    if (error_message) *error_message = e.what();
    return kExitConfigError;
  }
}

// ---------------------------------------------------------------------------
// checks pipeline

namespace {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  std::string detail;
};

Tensor2 forward_with(const Model& model, const Structure& s, const Tensor2& features,
                     CouplingTables& tables) {
  return model_forward(model, s, features, tables);
}

// Relative equivariance error of the full model under one group element.
double model_equivariance_error(const Model& model, const Task& task, const GroupElement& g,
                                CouplingTables& tables) {
  Tensor2 features = task_features(task, Tensor2(task.n_classes, task.slot_sig.dim()));
  const IrrepsSignature in_sig = model_input_signature(model.spec);
  const IrrepsSignature out_sig = model_output_signature(model.spec);
  Tensor2 base = forward_with(model, task.structure, features, tables);

  Structure rotated = task.structure;
  Mat3 m = g.cartesian_matrix();
  for (Vec3& p : rotated.positions) p = m * p;
  if (rotated.lattice) {
    Mat3 l = *rotated.lattice;
    Mat3 lt = l.transposed();
    Mat3 rl = (m * lt).transposed();  // rows transform as vectors
    rotated.lattice = rl;
  }
  int lmax_in = 0, lmax_out = 0;
  for (const auto& e : in_sig.entries) lmax_in = std::max(lmax_in, e.ir.l);
  for (const auto& e : out_sig.entries) lmax_out = std::max(lmax_out, e.ir.l);
  RepBlocks rb_in = RepBlocks::build(lmax_in, g);
  RepBlocks rb_out = RepBlocks::build(lmax_out, g);

  Tensor2 rot_features(features.rows, features.cols);
  for (int i = 0; i < features.rows; ++i)
    rb_in.apply(in_sig, &features.v[static_cast<std::size_t>(i) * features.cols],
                &rot_features.v[static_cast<std::size_t>(i) * features.cols]);
  Tensor2 out_rotated_input = forward_with(model, rotated, rot_features, tables);

  double num = 0, den = 0;
  std::vector<double> row(base.cols);
  for (int i = 0; i < base.rows; ++i) {
    rb_out.apply(out_sig, &base.v[static_cast<std::size_t>(i) * base.cols], row.data());
    for (int c = 0; c < base.cols; ++c) {
      double d = out_rotated_input.at(i, c) - row[c];
      num += d * d;
      den += row[c] * row[c];
    }
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

}  // namespace

int run_checks(const std::string& config_path, const CliOverrides& overrides,
               std::string* error_message) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path, overrides);
  } catch (const ConfigError& e) {
    if (error_message) *error_message = e.what();
    return kExitConfigError;
  }
  try {
    Task task = build_task(cfg);
    Model model = cfg.checks.checkpoint.empty() ? build_model(cfg, task)
                                                : load_checkpoint(cfg.checks.checkpoint);
    CouplingTables tables(cfg.checks.perturb_w3j);
    std::mt19937_64 rng(splitmix64(cfg.seed + 2));
    std::vector<CheckResult> results;

    if (cfg.checks.equivariance) {
      double worst = 0;
      for (int i = 0; i < cfg.checks.n_random_elements; ++i) {
        GroupElement g = random_group_element(rng, true);
        worst = std::max(worst, model_equivariance_error(model, task, g, tables));
        if (i + 1 < cfg.checks.n_random_elements) {
          GroupElement h = random_group_element(rng, true);
          worst = std::max(worst, model_equivariance_error(model, task, compose(g, h), tables));
          ++i;
        }
      }
      results.push_back({"equivariance", worst < 1e-8, worst, "max relative error"});
    }
    if (cfg.checks.curie) {
      CandidateGroup group = scenario_group(task);
      const IrrepsSignature in_sig = model_input_signature(model.spec);
      const IrrepsSignature out_sig = model_output_signature(model.spec);
      TensorField input{task.structure, in_sig,
                        task_features(task, Tensor2(task.n_classes, task.slot_sig.dim()))};
      auto fwd = [&](const TensorField& f) {
        return forward_with(model, f.structure, f.values, tables);
      };
      CurieReport report = check_curie(fwd, input, out_sig, group, 1e-6, 1e-3);
      results.push_back({"curie_containment", report.violations.empty(),
                         double(report.violations.size()),
                         std::to_string(report.input.elements.size()) + " input elements"});
    }
    if (cfg.checks.combination) {
      CandidateGroup group = CandidateGroup::cubic48();
      IrrepsSignature sig = IrrepsSignature::natural_ladder(4);
      std::normal_distribution<double> gauss;
      bool ok = true;
      for (int trial = 0; trial < 25 && ok; ++trial) {
        GeometricTensor x(sig), y(sig);
        for (double& v : x.coeffs) v = gauss(rng);
        for (double& v : y.coeffs) v = gauss(rng);
        ok = check_combination(x, y, gauss(rng), gauss(rng), group, 1e-6);
      }
      results.push_back({"symmetry_combination", ok, ok ? 1.0 : 0.0, "random trials"});
    }
    if (cfg.checks.gradient_equivariance) {
      IrrepsSignature sig = IrrepsSignature::natural_ladder(task.out_lmax);
      std::normal_distribution<double> gauss;
      double worst = 0;
      bool flagged = false;
      for (int trial = 0; trial < cfg.checks.n_random_elements; ++trial) {
        GeometricTensor x(sig), y(sig);
        for (double& v : x.coeffs) v = gauss(rng);
        for (double& v : y.coeffs) v = gauss(rng);
        GroupElement g = random_group_element(rng, true);
        auto res = check_gradient_equivariance(sig, x, y, g);
        if (res.absolute) flagged = true;
        worst = std::max(worst, res.error);
      }
      results.push_back({"gradient_equivariance", worst < 1e-8 && !flagged, worst,
                         "max relative error"});
    }

    bool all = true;
    json report;
    json checks = json::array();
    for (const CheckResult& r : results) {
      all = all && r.passed;
      std::printf("[%s] %s: %.3e (%s)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.value,
                  r.detail.c_str());
      json e;
      e["name"] = r.name;
      e["passed"] = r.passed;
      e["value"] = r.value;
      e["detail"] = r.detail;
      checks.push_back(e);
    }
    report["checks"] = checks;
    report["all_passed"] = all;
    if (!cfg.output.dir.empty()) {
      fs::create_directories(cfg.output.dir);
      write_file(cfg.output.dir + "/check_report.json", report.dump(2) + "\n");
    }
    return all ? kExitOk : kExitCheckFailed;
  } catch (const std::exception& e) {
    if (error_message) *error_message = e.what();
    return kExitConfigError;
  }
}

// ---------------------------------------------------------------------------
// table dumps

std::string tables_w3j_json(int l1, int l2, int l3) {
  Wigner3j w = wigner_3j(l1, l2, l3);
  const int d1 = 2 * l1 + 1, d2 = 2 * l2 + 1, d3 = 2 * l3 + 1;
  json arr = json::array();
  for (int a = 0; a < d1; ++a) {
    json plane = json::array();
    for (int b = 0; b < d2; ++b) {
      json row = json::array();
      for (int c = 0; c < d3; ++c)
        row.push_back(w.c[(static_cast<std::size_t>(a) * d2 + b) * d3 + c]);
      plane.push_back(row);
    }
    arr.push_back(plane);
  }
  return arr.dump() + "\n";
}

std::string tables_wigner_d_json(int l, const Vec3& axis, double angle, bool inversion) {
  GroupElement g = GroupElement::from_axis_angle(axis, angle, inversion);
  DMatrix d = wigner_D(l, g);
  json arr = json::array();
  for (int r = 0; r < d.n; ++r) {
    json row = json::array();
    for (int c = 0; c < d.n; ++c) row.push_back(d(r, c));
    arr.push_back(row);
  }
  json out;
  out["l"] = l;
  out["axis"] = {g.axis.x, g.axis.y, g.axis.z};
  out["angle"] = g.angle;
  out["inversion"] = g.inversion;
  out["rotation_block"] = arr;
  out["parity_sign_if_odd"] = g.inversion ? -1 : 1;
  return out.dump() + "\n";
}

}  // namespace opnet
