#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "opnet/network.hpp"

namespace opnet {

// Exit codes shared by the library pipeline and the command line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDiverged = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CliOverrides {
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> grid_n;
};

// Runs the configured training or discovery pipeline and writes
// results.json, magnitudes.csv, signals/*.csv, model.ckpt and
// manifest.json into the output directory.
int run_experiment(const std::string& config_path, const CliOverrides& overrides,
                   std::string* error_message);

// Runs the property checks (equivariance, Curie containment, symmetry
// combination, gradient equivariance) against a fresh or checkpointed
// model; prints one line per check.
int run_checks(const std::string& config_path, const CliOverrides& overrides,
               std::string* error_message);

// Deterministic JSON dumps of coupling and rotation tables.
std::string tables_w3j_json(int l1, int l2, int l3);
std::string tables_wigner_d_json(int l, const Vec3& axis, double angle, bool inversion);

// Model checkpoint: a JSON document with a header (spec, signatures, seed)
// and the flat weight array as JSON numbers (shortest round-trip decimals,
// so reload is bit-exact).
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// FNV-1a 64-bit content hash used by the output manifest.
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace opnet
