#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sgdstop/experiment.hpp"
#include "sgdstop/json_util.hpp"

using namespace sgdstop;
namespace fs = std::filesystem;

namespace {

nlohmann::json minimal_config() {
  return {{"problem", {{"problem", "quadratic"}, {"d", 2}}},
          {"oracle", {{"oracle", "additive_gaussian"}, {"sigma", 0.0}, {"p", 3.0}}},
          {"schedule", {{"family", "power"}, {"q", 0.75}, {"p", 3.0}}},
          {"theta1", {{"policy", "fixed"}, {"value", {1.0, -1.0}}}},
          {"T", 1000},
          {"n_trajectories", 4},
          {"base_seed", 3}};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("sgdstop_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j) {
  const auto path = dir / "config.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run_file(const fs::path& cfg, const fs::path& out, std::string* err_text = nullptr) {
  RunOptions opt;
  opt.out_dir = out.string();
  opt.threads = 1;
  std::ostringstream out_s, err_s;
  const int code = run_experiment_file(cfg, opt, out_s, err_s);
  if (err_text) *err_text = err_s.str();
  return code;
}

}  // namespace

TEST_CASE("minimal config runs and writes four files") {
  const auto dir = scratch("minimal");
  const int code = run_file(write_config(dir, minimal_config()), dir / "out");
  CHECK(code == 0);
  for (const char* f : {"ensemble.json", "checkpoints.csv", "diagnostics.json", "manifest.json"})
    CHECK(fs::exists(dir / "out" / f));
  CHECK_FALSE(fs::exists(dir / "out" / "trajectories"));
  const auto manifest = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
  CHECK(manifest.contains("config_hash"));
  CHECK(manifest.at("library_version") == SGDSTOP_VERSION);
}

TEST_CASE("invalid configs exit 2 with the field path") {
  const auto dir = scratch("invalid");
  std::string err;

  auto typo = minimal_config();
  typo["n_trajectorys"] = 4;
  CHECK(run_file(write_config(dir, typo), dir / "out", &err) == 2);
  CHECK(err.find("/n_trajectorys") != std::string::npos);

  auto mismatch = minimal_config();
  mismatch["oracle"]["p"] = 4.0;
  CHECK(run_file(write_config(dir, mismatch), dir / "out", &err) == 2);
  CHECK(err.find("/oracle/p") != std::string::npos);

  auto unknown_check = minimal_config();
  unknown_check["diagnostics"] = {{{"check", "bogus"}}};
  CHECK(run_file(write_config(dir, unknown_check), dir / "out", &err) == 2);

  auto missing_param = minimal_config();
  missing_param["diagnostics"] = {{{"check", "truncated_increment"}}};
  CHECK(run_file(write_config(dir, missing_param), dir / "out", &err) == 2);

  auto zero_t = minimal_config();
  zero_t["T"] = 0;
  CHECK(run_file(write_config(dir, zero_t), dir / "out", &err) == 2);

  const auto broken = dir / "broken.json";
  std::ofstream(broken) << "{\n  \"T\": 10,\n  oops\n}";
  CHECK(run_file(broken, dir / "out", &err) == 2);
  CHECK(err.find("broken.json:3:") != std::string::npos);

  CHECK(run_file(dir / "absent.json", dir / "out", &err) == 2);
}

TEST_CASE("require_relaxed gates non-relaxed schedules") {
  const auto dir = scratch("gate");
  auto cfg = minimal_config();
  cfg["schedule"]["q"] = 0.3;
  cfg["require_relaxed"] = true;
  std::string err;
  CHECK(run_file(write_config(dir, cfg), dir / "out", &err) == 2);
  CHECK(err.find("relaxed: no") != std::string::npos);
  cfg["require_relaxed"] = false;
  CHECK(run_file(write_config(dir, cfg), dir / "out", &err) == 0);
}

TEST_CASE("martingale window needs noise vectors") {
  auto cfg = minimal_config();
  cfg["diagnostics"] = {{{"check", "martingale_window"}, {"times", {10, 100}}}};
  CHECK_THROWS_AS(parse_config(cfg), ConfigError);
  cfg["record_policy"] = {{"noise_vectors", true}};
  CHECK_NOTHROW(parse_config(cfg));
}

TEST_CASE("property: config hash tracks semantic content only") {
  const auto base = parse_config(minimal_config());

  auto relocated = minimal_config();
  relocated["output_dir"] = "/tmp/elsewhere";
  CHECK(parse_config(relocated).hash() == base.hash());

  const auto original = minimal_config();
  auto reordered = nlohmann::json::object();
  for (auto it = original.rbegin(); it != original.rend(); ++it) reordered[it.key()] = it.value();
  CHECK(parse_config(reordered).hash() == base.hash());

  auto defaults_spelled_out = minimal_config();
  defaults_spelled_out["checkpoints"] = 8;
  CHECK(parse_config(defaults_spelled_out).hash() == base.hash());

  for (const auto& [ptr, value] : std::vector<std::pair<std::string, nlohmann::json>>{
           {"/T", 1001}, {"/base_seed", 4}, {"/schedule/q", 0.8}, {"/oracle/sigma", 0.01}, {"/theta1/value/0", 2.0}}) {
    CAPTURE(ptr);
    auto changed = minimal_config();
    changed[nlohmann::json::json_pointer(ptr)] = value;
    CHECK(parse_config(changed).hash() != base.hash());
  }
}

TEST_CASE("rerun into a fresh directory is byte-identical") {
  const auto dir = scratch("rerun");
  auto cfg = minimal_config();
  cfg["oracle"]["sigma"] = 0.1;
  cfg["theta1"] = {{"policy", "ball"}, {"radius", 2.0}};
  cfg["record_policy"] = {{"per_trajectory_csv", true}};
  cfg["diagnostics"] = {{{"check", "martingale_mean"}}, {{"check", "descent_residuals"}}};
  const auto path = write_config(dir, cfg);
  REQUIRE(run_file(path, dir / "a") == 0);
  REQUIRE(run_file(path, dir / "b") == 0);
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    CAPTURE(rel.string());
    CHECK(slurp(e.path()) == slurp(dir / "b" / rel));
    ++n;
  }
  CHECK(n == 4 + 4);
}

TEST_CASE("failing checks exit 1") {
  const auto dir = scratch("failing");
  auto cfg = minimal_config();
  cfg["T"] = 10;
  cfg["schedule"]["scale"] = 0.01;
  cfg["diagnostics"] = {{{"check", "grad_sq_final"}, {"threshold", 1e-12}}};
  CHECK(run_file(write_config(dir, cfg), dir / "out") == 1);
}
