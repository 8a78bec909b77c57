#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "opnet/experiment.hpp"
#include "opnet/scenarios.hpp"
#include "opnet/training.hpp"

using namespace opnet;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  fs::path dir = fs::temp_directory_path() / "opnet_tests";
  fs::create_directories(dir);
  fs::path p = dir / name;
  std::ofstream out(p);
  out << content;
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json mini_train_config(const std::string& outdir, int steps) {
  json cfg;
  cfg["version"] = 1;
  cfg["seed"] = 42;
  cfg["scenario"] = {{"id", "rect_to_square"}};
  cfg["model"] = {{"layers", 2}, {"hidden_mult", 2}, {"hidden_lmax", 3}, {"filter_lmax", 3}};
  cfg["training"] = {{"mode", "train"}, {"steps", steps}};
  cfg["output"] = {{"dir", outdir}, {"grid_n", 16}};
  return cfg;
}

}  // namespace

TEST_CASE("config validation rejects unknown keys without writing outputs") {
  std::string outdir = (fs::temp_directory_path() / "opnet_tests" / "out_bad").string();
  fs::remove_all(outdir);
  json cfg = mini_train_config(outdir, 2);
  cfg["typo_key"] = 1;
  std::string path = write_temp("bad.json", cfg.dump());
  std::string err;
  CHECK(run_experiment(path, {}, &err) == kExitConfigError);
  CHECK(err.find("typo_key") != std::string::npos);
  CHECK(!fs::exists(outdir));

  json nested = mini_train_config(outdir, 2);
  nested["training"]["unknown_inner"] = true;
  path = write_temp("bad2.json", nested.dump());
  CHECK(run_experiment(path, {}, &err) == kExitConfigError);
  CHECK(!fs::exists(outdir));

  json missing;
  missing["version"] = 1;
  path = write_temp("bad3.json", missing.dump());
  CHECK(run_experiment(path, {}, &err) == kExitConfigError);

  std::string garbled = write_temp("bad4.json", "{not json");
  CHECK(run_experiment(garbled, {}, &err) == kExitConfigError);
}

TEST_CASE("mini run writes the documented artifact set with valid hashes") {
  std::string outdir = (fs::temp_directory_path() / "opnet_tests" / "out_run").string();
  fs::remove_all(outdir);
  std::string path = write_temp("run.json", mini_train_config(outdir, 3).dump());
  std::string err;
  REQUIRE(run_experiment(path, {}, &err) == kExitOk);

  for (const char* f : {"results.json", "magnitudes.csv", "model.ckpt", "manifest.json",
                        "structure.xyz", "signals/point_0.csv", "signals/point_3.csv"})
    CHECK(fs::exists(fs::path(outdir) / f));

  json manifest = json::parse(slurp(outdir + "/manifest.json"));
  for (const auto& entry : manifest["files"]) {
    std::string rel = entry["path"].get<std::string>();
    std::string content = slurp(outdir + "/" + rel);
    CHECK(content.size() == entry["bytes"].get<std::size_t>());
    std::ostringstream h;
    h << "fnv1a64:" << std::hex << fnv1a64(content);
    CHECK(h.str() == entry["hash"].get<std::string>());
  }

  json results = json::parse(slurp(outdir + "/results.json"));
  CHECK(results["results"]["mode"] == "train");
  CHECK(results["results"]["loss_history"].size() == 3);
  CHECK(results["results"]["stabilizers"].contains("input_before"));

  // Identical reruns give numerically identical results.
  std::string outdir2 = outdir + "_again";
  fs::remove_all(outdir2);
  std::string path2 = write_temp("run2.json", mini_train_config(outdir2, 3).dump());
  REQUIRE(run_experiment(path2, {}, &err) == kExitOk);
  json again = json::parse(slurp(outdir2 + "/results.json"));
  CHECK(results["results"]["final_loss"].get<double>() ==
        again["results"]["final_loss"].get<double>());
  CHECK(results["results"]["loss_history"] == again["results"]["loss_history"]);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Task task = make_square_rect_task(DeformDirection::SquareToRect);
  ModelSpec spec;
  spec.n_layers = 2;
  spec.hidden_mult = 2;
  spec.hidden_lmax = 3;
  spec.filter_lmax = 3;
  spec.slot_sig = task.slot_sig;
  spec.seed = 31337;
  Model model = Model::create(spec);
  std::string path = write_temp("roundtrip.ckpt", "");
  save_checkpoint(model, path);
  Model back = load_checkpoint(path);
  REQUIRE(back.params.size() == model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i)
    CHECK(back.params[i] == model.params[i]);
  CHECK(back.spec.slot_sig == model.spec.slot_sig);
  CHECK(back.spec.seed == model.spec.seed);
}

TEST_CASE("divergent configuration exits with the dedicated code and partial history") {
  std::string outdir = (fs::temp_directory_path() / "opnet_tests" / "out_div").string();
  fs::remove_all(outdir);
  json cfg = mini_train_config(outdir, 400);
  cfg["training"]["lr"] = 10.0;
  std::string path = write_temp("div.json", cfg.dump());
  std::string err;
  CHECK(run_experiment(path, {}, &err) == kExitDiverged);
  json results = json::parse(slurp(outdir + "/results.json"));
  CHECK(results["results"]["diverged"] == true);
  CHECK(results["results"]["loss_history"].size() > 0);
  CHECK(results["results"]["loss_history"].size() < 400);
}

TEST_CASE("tables dumps are deterministic and match the library") {
  std::string a = tables_w3j_json(0, 0, 0);
  CHECK(a == "[[[1.0]]]\n");
  CHECK(tables_w3j_json(1, 1, 2) == tables_w3j_json(1, 1, 2));

  json dump = json::parse(tables_w3j_json(1, 1, 2));
  Wigner3j w = wigner_3j(1, 1, 2);
  for (int m1 = -1; m1 <= 1; ++m1)
    for (int m2 = -1; m2 <= 1; ++m2)
      for (int m3 = -2; m3 <= 2; ++m3)
        CHECK(dump[m1 + 1][m2 + 1][m3 + 2].get<double>() ==
              doctest::Approx(w.at(m1, m2, m3)).epsilon(1e-15));

  CHECK_THROWS_AS(tables_w3j_json(1, 2, 4), std::invalid_argument);

  json d = json::parse(tables_wigner_d_json(2, {0, 0, 1}, 0.7, true));
  CHECK(d["l"] == 2);
  CHECK(d["inversion"] == true);
  CHECK(d["rotation_block"].size() == 5);
}

TEST_CASE("check pipeline passes on a fresh model and fails when couplings are perturbed") {
  std::string outdir = (fs::temp_directory_path() / "opnet_tests" / "out_check").string();
  fs::remove_all(outdir);
  json cfg;
  cfg["version"] = 1;
  cfg["seed"] = 7;
  cfg["scenario"] = {{"id", "square_to_rect"}};
  cfg["model"] = {{"layers", 2}, {"hidden_mult", 2}, {"hidden_lmax", 3}, {"filter_lmax", 3}};
  cfg["checks"] = {{"n_random_elements", 6}};
  cfg["output"] = {{"dir", outdir}};
  std::string path = write_temp("check.json", cfg.dump());
  std::string err;
  CHECK(run_checks(path, {}, &err) == kExitOk);
  CHECK(fs::exists(fs::path(outdir) / "check_report.json"));

  cfg["checks"]["perturb_w3j"] = 0.02;
  path = write_temp("check_broken.json", cfg.dump());
  CHECK(run_checks(path, {}, &err) == kExitCheckFailed);
}

TEST_CASE("cli overrides replace seed and output directory") {
  std::string outdir = (fs::temp_directory_path() / "opnet_tests" / "out_override").string();
  fs::remove_all(outdir);
  json cfg = mini_train_config("unused_dir", 2);
  std::string path = write_temp("override.json", cfg.dump());
  CliOverrides ov;
  ov.out_dir = outdir;
  ov.seed = 99;
  std::string err;
  REQUIRE(run_experiment(path, ov, &err) == kExitOk);
  json results = json::parse(slurp(outdir + "/results.json"));
  CHECK(results["seed"].get<std::uint64_t>() == 99);
  CHECK(!fs::exists("unused_dir"));
}
