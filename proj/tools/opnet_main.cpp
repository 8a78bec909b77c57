#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "opnet/experiment.hpp"

namespace {

opnet::CliOverrides make_overrides(const std::string& out, std::uint64_t seed, bool seed_set,
                                   int grid, bool grid_set) {
  opnet::CliOverrides o;
  if (!out.empty()) o.out_dir = out;
  if (seed_set) o.seed = seed;
  if (grid_set) o.grid_n = grid;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equivariant point-cloud networks and order-parameter discovery"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  int grid_n = 64;

  auto* run = app.add_subcommand("run", "Run a training or discovery pipeline");
  run->add_option("--config", config_path, "JSON experiment configuration")->required();
  auto* run_out = run->add_option("--out", out_dir, "Output directory override");
  auto* run_seed = run->add_option("--seed", seed, "Seed override");
  auto* run_grid = run->add_option("--grid-res", grid_n, "Sphere grid resolution override");

  auto* check = app.add_subcommand("check", "Run the symmetry property checks");
  check->add_option("--config", config_path, "JSON experiment configuration")->required();
  auto* check_out = check->add_option("--out", out_dir, "Report directory override");
  auto* check_seed = check->add_option("--seed", seed, "Seed override");
  auto* check_grid = check->add_option("--grid-res", grid_n, "Sphere grid resolution override");

  auto* tables = app.add_subcommand("tables", "Dump coupling or rotation tables as JSON");
  std::vector<int> w3j_degrees;
  int d_degree = -1;
  std::vector<double> d_axis{0, 0, 1};
  double d_angle = 0;
  bool d_inversion = false;
  std::string tables_out;
  tables->add_option("--w3j", w3j_degrees, "Three degrees l1 l2 l3")->expected(3);
  tables->add_option("--wigner-d", d_degree, "Degree of the rotation block");
  tables->add_option("--axis", d_axis, "Rotation axis")->expected(3);
  tables->add_option("--angle", d_angle, "Rotation angle in radians");
  tables->add_flag("--inversion", d_inversion, "Compose with inversion");
  tables->add_option("--out", tables_out, "Write to file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  std::string error;
  if (run->parsed()) {
    int rc = opnet::run_experiment(
        config_path,
        make_overrides(run_out->count() ? out_dir : "", seed, run_seed->count() > 0, grid_n,
                       run_grid->count() > 0),
        &error);
    if (rc != opnet::kExitOk && !error.empty()) std::fprintf(stderr, "error: %s\n", error.c_str());
    return rc;
  }
  if (check->parsed()) {
    int rc = opnet::run_checks(
        config_path,
        make_overrides(check_out->count() ? out_dir : "", seed, check_seed->count() > 0,
                       grid_n, check_grid->count() > 0),
        &error);
    if (rc != opnet::kExitOk && !error.empty()) std::fprintf(stderr, "error: %s\n", error.c_str());
    return rc;
  }
  if (tables->parsed()) {
    try {
      std::string doc;
      if (!w3j_degrees.empty()) {
        doc = opnet::tables_w3j_json(w3j_degrees[0], w3j_degrees[1], w3j_degrees[2]);
      } else if (d_degree >= 0) {
        doc = opnet::tables_wigner_d_json(
            d_degree, {d_axis[0], d_axis[1], d_axis[2]}, d_angle, d_inversion);
      } else {
        std::fprintf(stderr, "error: tables needs --w3j or --wigner-d\n");
        return opnet::kExitConfigError;
      }
      if (tables_out.empty()) {
        std::fputs(doc.c_str(), stdout);
      } else {
        FILE* f = std::fopen(tables_out.c_str(), "wb");
        if (!f) {
          std::fprintf(stderr, "error: cannot write %s\n", tables_out.c_str());
          return opnet::kExitConfigError;
        }
        std::fputs(doc.c_str(), f);
        std::fclose(f);
      }
      return opnet::kExitOk;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return opnet::kExitConfigError;
    }
  }
  return opnet::kExitConfigError;
}
