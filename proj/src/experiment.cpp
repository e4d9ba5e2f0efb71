#include "sgdstop/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "sgdstop/json_util.hpp"

#ifndef SGDSTOP_VERSION
#define SGDSTOP_VERSION "0.0.0"
#endif

namespace sgdstop {

namespace {

using nlohmann::json;

// Parameter defaults per check; null marks a required parameter.
const std::map<std::string, json>& check_defaults() {
  static const std::map<std::string, json> defaults{
      {"descent_residuals", {{"tol_scale", 1e-9}}},
      {"loss_bound", {{"n_points", 10000}, {"radius", 3.0}, {"seed", 0}}},
      {"assumptions", {{"n_samples", 10000}, {"radius", 3.0}, {"seed", 0}}},
      {"martingale_mean", {{"z", 4.0}}},
      {"grad_sq_final", {{"threshold", 1e-2}}},
      {"grad_sq_trend", json::object()},
      {"as_proxy", {{"tolerance", 0.1}, {"min_fraction", 0.95}}},
      {"critical_value_match", {{"tolerance", 1e-2}, {"min_fraction", 0.95}}},
      {"upcross_saturation", {{"x", nullptr}, {"width", 0.05}, {"min_fraction", 0.9}}},
      {"truncated_increment", {{"nu", nullptr}}},
      {"recursive_inequality", {{"a", nullptr}, {"b", nullptr}, {"c", nullptr}, {"m", 1}}},
      {"indicator_descent", {{"y", nullptr}, {"m", 1}}},
      {"martingale_window", {{"times", nullptr}, {"window", 1.0}, {"delta", 0.05}}},
      {"sup_grad_sq", json::object()},
  };
  return defaults;
}

DiagnosticSpec parse_diagnostic(const json& j, const std::string& path) {
  StrictObject obj(j, path);
  DiagnosticSpec spec;
  spec.check = obj.required<std::string>("check");
  const auto& table = check_defaults();
  const auto it = table.find(spec.check);
  if (it == table.end()) throw ConfigError(obj.field_path("check"), "unknown check '" + spec.check + "'");
  spec.params = json::object();
  for (const auto& [key, fallback] : it->second.items()) {
    if (obj.has(key)) {
      const auto& v = obj.raw(key);
      if (!fallback.is_null() && fallback.is_number() && !v.is_number())
        throw ConfigError(obj.field_path(key), "expected a number");
      if (fallback.is_number_integer() && !v.is_number_integer())
        throw ConfigError(obj.field_path(key), "expected an integer");
      spec.params[key] = v;
    } else if (fallback.is_null()) {
      throw ConfigError(obj.field_path(key), "missing required parameter");
    } else {
      spec.params[key] = fallback;
    }
  }
  obj.finish();
  return spec;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(); }

}  // namespace

std::vector<std::string> known_checks() {
  std::vector<std::string> names;
  for (const auto& [k, v] : check_defaults()) names.push_back(k);
  return names;
}

json ExperimentConfig::canonical() const {
  json diags = json::array();
  for (const auto& d : diagnostics) diags.push_back({{"check", d.check}, {"params", d.params}});
  return {{"problem", setup.problem->to_json()},
          {"oracle", setup.oracle.to_json()},
          {"schedule", setup.schedule.to_json()},
          {"theta1", setup.theta1.to_json()},
          {"T", setup.T},
          {"n_trajectories", n_trajectories},
          {"base_seed", base_seed},
          {"checkpoints", checkpoints},
          {"require_relaxed", require_relaxed},
          {"max_divergence_fraction", max_divergence_fraction},
          {"record_policy",
           {{"per_trajectory_csv", per_trajectory_csv},
            {"noise_vectors", setup.record.keep_noise},
            {"iterate_budget", setup.record.keep_iterates ? setup.record.iterate_budget : 0}}},
          {"diagnostics", diags}};
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(canonical().dump()); }

ExperimentConfig parse_config(const json& j) {
  StrictObject obj(j, "");
  ProblemPtr problem = problem_from_json(obj.raw("problem"), "/problem");
  const int d = problem->dimension();
  GradientOracle oracle = GradientOracle::from_json(obj.raw("oracle"), d, "/oracle");
  StepSizeSchedule schedule = StepSizeSchedule::from_json(obj.raw("schedule"), "/schedule");
  if (schedule.p_exponent() != oracle.declared().p)
    throw ConfigError("/oracle/p", "declared p must equal the schedule's p exponent");
  Theta1Policy theta1 =
      obj.has("theta1") ? Theta1Policy::from_json(obj.raw("theta1"), d, "/theta1") : Theta1Policy{};

  const auto T = obj.required<std::int64_t>("T");
  if (T < 1) throw ConfigError("/T", "must be >= 1");
  const auto n = obj.required<std::int64_t>("n_trajectories");
  if (n < 2) throw ConfigError("/n_trajectories", "must be >= 2");

  RecordPolicy record;
  bool per_csv = false;
  if (obj.has("record_policy")) {
    StrictObject rp(obj.raw("record_policy"), "/record_policy");
    per_csv = rp.optional<bool>("per_trajectory_csv", false);
    record.keep_noise = rp.optional<bool>("noise_vectors", false);
    const auto budget = rp.optional<std::int64_t>("iterate_budget", 0);
    if (budget < 0) throw ConfigError("/record_policy/iterate_budget", "must be >= 0");
    record.keep_iterates = budget > 0;
    record.iterate_budget = budget;
    rp.finish();
  }

  ExperimentConfig cfg{.setup = EnsembleSetup{problem, oracle, schedule, theta1, T, record}};
  cfg.n_trajectories = n;
  cfg.per_trajectory_csv = per_csv;
  cfg.base_seed = obj.optional<std::uint64_t>("base_seed", 0);
  cfg.checkpoints = obj.optional<int>("checkpoints", 8);
  if (cfg.checkpoints < 1) throw ConfigError("/checkpoints", "must be >= 1");
  cfg.require_relaxed = obj.optional<bool>("require_relaxed", false);
  cfg.max_divergence_fraction = obj.optional<double>("max_divergence_fraction", 0.0);
  if (!(cfg.max_divergence_fraction >= 0.0 && cfg.max_divergence_fraction <= 1.0))
    throw ConfigError("/max_divergence_fraction", "must lie in [0, 1]");
  if (obj.has("output_dir")) cfg.output_dir = obj.required<std::string>("output_dir");
  if (obj.has("diagnostics")) {
    const auto& list = obj.raw("diagnostics");
    if (!list.is_array()) throw ConfigError("/diagnostics", "expected an array");
    for (std::size_t i = 0; i < list.size(); ++i)
      cfg.diagnostics.push_back(parse_diagnostic(list[i], "/diagnostics/" + std::to_string(i)));
  }
  obj.finish();

  for (std::size_t i = 0; i < cfg.diagnostics.size(); ++i) {
    const auto& dspec = cfg.diagnostics[i];
    const auto at = "/diagnostics/" + std::to_string(i);
    if (dspec.check == "martingale_window") {
      if (!cfg.setup.record.keep_noise)
        throw ConfigError(at, "martingale_window needs record_policy.noise_vectors = true");
      if (!dspec.params["times"].is_array()) throw ConfigError(at + "/times", "expected an array of steps");
    }
    if (dspec.check == "upcross_saturation" && !(dspec.params["width"].get<double>() > 0.0))
      throw ConfigError(at + "/width", "must be positive");
    if (dspec.check == "recursive_inequality") {
      const double a = dspec.params["a"], b = dspec.params["b"], c = dspec.params["c"];
      if (!(0.0 < a && a < b && b < c)) throw ConfigError(at, "needs 0 < a < b < c");
    }
    if (dspec.check == "truncated_increment" && !(dspec.params["nu"].get<double>() > 0.0))
      throw ConfigError(at + "/nu", "must be positive");
  }

  if (cfg.require_relaxed) {
    const auto cls = cfg.setup.schedule.classify();
    if (cls.relaxed != Verdict::yes)
      throw ConfigError("/require_relaxed", "schedule is not relaxed (RM: " + to_string(cls.robbins_monro) +
                                                ", relaxed: " + to_string(cls.relaxed) + "; " + cls.governing_test + ")");
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col), e.what());
  }
  return parse_config(j);
}

ExperimentOutcome run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                 unsigned threads) {
  namespace fs = std::filesystem;
  const auto& setup = config.setup;
  const auto& problem = *setup.problem;
  fs::create_directories(out_dir);
  if (config.per_trajectory_csv) fs::create_directories(out_dir / "trajectories");

  EnsemblePlan plan;
  plan.n = config.n_trajectories;
  plan.base_seed = config.base_seed;
  plan.threads = threads;
  plan.n_checkpoints = config.checkpoints;
  // Slots into the plan's per-trajectory lists, by diagnostic index.
  std::vector<std::size_t> slot(config.diagnostics.size(), 0);
  for (std::size_t i = 0; i < config.diagnostics.size(); ++i) {
    const auto& d = config.diagnostics[i];
    const auto& p = d.params;
    if (d.check == "as_proxy") {
      plan.as_tolerance = p["tolerance"];
    } else if (d.check == "upcross_saturation") {
      slot[i] = plan.upcross_intervals.size();
      const double x = p["x"], w = p["width"];
      plan.upcross_intervals.emplace_back(x, x + w);
    } else if (d.check == "truncated_increment") {
      slot[i] = plan.nus.size();
      plan.nus.push_back(p["nu"]);
    } else if (d.check == "recursive_inequality") {
      slot[i] = plan.recursive.size();
      plan.recursive.push_back({p["a"], p["b"], p["c"], p["m"]});
    } else if (d.check == "indicator_descent") {
      slot[i] = plan.indicator.size();
      plan.indicator.push_back({p["y"], p["m"]});
    } else if (d.check == "martingale_window") {
      plan.theta_window = ThetaWindowSpec{p["times"].get<std::vector<std::int64_t>>(), p["window"], p["delta"]};
    }
  }

  TrajectoryCallback callback;
  if (config.per_trajectory_csv) {
    callback = [&out_dir](const Trajectory& traj) {
      std::ofstream out(out_dir / "trajectories" / ("seed_" + std::to_string(traj.seed) + ".csv"), std::ios::binary);
      write_records_csv(traj, out);
    };
  }

  ExperimentOutcome outcome;
  outcome.result = run_ensemble(setup, plan, callback);
  const auto& res = outcome.result;
  const auto& st = res.stats;
  auto& report = outcome.report;

  for (std::size_t i = 0; i < config.diagnostics.size(); ++i) {
    const auto& d = config.diagnostics[i];
    const auto& p = d.params;
    DiagnosticEntry e{d.check, p, json(), json(), std::nullopt, std::nullopt};
    if (d.check == "descent_residuals") {
      e.value = {{"max_scaled_residual", finite_or_null(st.descent_max_scaled)},
                 {"steps_exceeding", st.descent_exceeding}};
      e.tolerance = p["tol_scale"];
      // The per-step tolerance is fixed when trajectories are summarized.
      e.pass = st.descent_max_scaled <= p["tol_scale"].get<double>();
    } else if (d.check == "loss_bound") {
      RandomStream rng(p["seed"].get<std::uint64_t>(), 0x1055);
      const auto sampler = PointSampler::ball(problem.dimension(), p["radius"]);
      std::vector<Vector> pts;
      for (std::int64_t k = 0; k < p["n_points"].get<std::int64_t>(); ++k) pts.push_back(sampler.draw(rng));
      const auto lb = loss_bound_check(problem, pts);
      e.value = lb.to_json();
      e.tolerance = 1e-9;
      e.pass = lb.pass;
    } else if (d.check == "assumptions") {
      const auto rep = check_loss_assumptions(problem, PointSampler::ball(problem.dimension(), p["radius"]),
                                              p["n_samples"], p["seed"]);
      e.value = rep.to_json();
      e.pass = rep.all_pass();
    } else if (d.check == "martingale_mean") {
      const double z = p["z"];
      bool ok = true;
      double worst = 0.0;
      for (const auto& c : st.checkpoints) {
        const double zc = c.mart_se > 0.0 ? std::abs(c.mart_mean) / c.mart_se : (c.mart_mean == 0.0 ? 0.0 : INFINITY);
        worst = std::max(worst, zc);
        ok = ok && zc <= z;
      }
      e.value = {{"max_abs_z", finite_or_null(worst)}};
      e.tolerance = z;
      e.pass = ok;
    } else if (d.check == "grad_sq_final") {
      const auto& c = st.checkpoints.back();
      e.value = finite_or_null(c.mean_grad_sq);
      e.tolerance = p["threshold"];
      e.stderr_halfwidth = c.stderr_grad_sq;
      e.pass = c.mean_grad_sq < p["threshold"].get<double>();
    } else if (d.check == "grad_sq_trend") {
      e.value = {{"slope_last3", finite_or_null(st.grad_sq_slope)},
                 {"first", finite_or_null(st.checkpoints.front().mean_grad_sq)},
                 {"final", finite_or_null(st.checkpoints.back().mean_grad_sq)}};
      e.pass = st.grad_sq_slope < 0.0 && st.checkpoints.back().mean_grad_sq < st.checkpoints.front().mean_grad_sq;
    } else if (d.check == "as_proxy") {
      e.value = {{"fraction", finite_or_null(st.as_converged_fraction)}, {"label", "empirical a.s. proxy"}};
      e.tolerance = p["min_fraction"];
      e.pass = st.as_converged_fraction >= p["min_fraction"].get<double>();
    } else if (d.check == "critical_value_match") {
      const auto cm = critical_value_match(res.summaries, problem, p["tolerance"]);
      e.value = cm.to_json();
      e.tolerance = p["min_fraction"];
      if (cm.status != CheckStatus::inconclusive) e.pass = cm.fraction >= p["min_fraction"].get<double>();
    } else if (d.check == "upcross_saturation") {
      const auto& u = st.upcross[slot[i]];
      e.value = {{"saturated_fraction", finite_or_null(u.saturated_fraction)},
                 {"mean_count_full", finite_or_null(u.mean_full)},
                 {"bound_violations", u.bound_violations}};
      e.tolerance = p["min_fraction"];
      e.pass = u.saturated_fraction >= p["min_fraction"].get<double>() && u.bound_violations == 0;
    } else if (d.check == "truncated_increment") {
      const auto& m = st.truncated_sums[slot[i]];
      const auto& c = res.c_nu[slot[i]];
      e.value = {{"mean", finite_or_null(m.mean)}, {"C_nu", c ? json(c->c_nu) : json()}};
      e.stderr_halfwidth = 2.0 * m.se;
      if (c) e.pass = m.mean <= c->c_nu + 2.0 * m.se;
    } else if (d.check == "recursive_inequality") {
      const auto& r = res.recursive[slot[i]];
      e.value = r.to_json();
      e.stderr_halfwidth = 2.0 * std::sqrt(r.lhs_se * r.lhs_se + r.rhs_se * r.rhs_se);
      if (r.status != CheckStatus::inconclusive) e.pass = r.status == CheckStatus::pass;
    } else if (d.check == "indicator_descent") {
      const auto& m = st.indicator_residual[slot[i]];
      e.value = m.to_json();
      e.stderr_halfwidth = 2.0 * m.se;
      e.pass = m.mean <= 2.0 * m.se;
    } else if (d.check == "martingale_window") {
      e.value = {{"times", st.theta_times}, {"median", json::array()}, {"clipped", st.theta_clipped}};
      bool ok = !st.theta_median.empty();
      for (std::size_t k = 0; k < st.theta_median.size(); ++k) {
        e.value["median"].push_back(finite_or_null(st.theta_median[k]));
        if (!std::isfinite(st.theta_median[k])) ok = false;
        if (k > 0 && !(st.theta_median[k] < st.theta_median[k - 1])) ok = false;
      }
      e.pass = ok;
    } else if (d.check == "sup_grad_sq") {
      e.value = {{"full", st.sup_grad_sq.to_json()}, {"first_half", st.sup_grad_sq_half.to_json()}};
    }
    report.add(std::move(e));
  }

  json ensemble_json = res.to_json();
  ensemble_json["config_hash"] = hex64(config.hash());
  write_text(out_dir / "ensemble.json", ensemble_json.dump(2) + "\n");
  {
    std::ostringstream csv;
    st.write_checkpoints_csv(csv);
    write_text(out_dir / "checkpoints.csv", csv.str());
  }
  write_text(out_dir / "diagnostics.json", report.to_json().dump(2) + "\n");
  json files = {"ensemble.json", "checkpoints.csv", "diagnostics.json", "manifest.json"};
  if (config.per_trajectory_csv) files.push_back("trajectories/");
  const json manifest{{"config_hash", hex64(config.hash())},
                      {"library_version", SGDSTOP_VERSION},
                      {"base_seed", config.base_seed},
                      {"n_trajectories", config.n_trajectories},
                      {"files", files},
                      {"config", config.canonical()}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");

  const double bad = static_cast<double>(st.diverged_count + st.failed_count) / static_cast<double>(st.n_trajectories);
  std::ostringstream summary;
  summary << "trajectories: " << st.n_trajectories << ", diverged: " << st.diverged_count
          << ", failed: " << st.failed_count << ", guarantee: " << res.guarantee;
  std::int64_t failed_checks = 0;
  for (const auto& e : report.entries)
    if (e.pass && !*e.pass) {
      ++failed_checks;
      summary << "\ncheck failed: " << e.check_name << " " << e.params.dump();
    }
  outcome.exit_code = 0;
  if (bad > config.max_divergence_fraction) {
    outcome.exit_code = 1;
    summary << "\ndivergence fraction " << bad << " exceeds max_divergence_fraction "
            << config.max_divergence_fraction;
  }
  if (failed_checks > 0) outcome.exit_code = 1;
  outcome.summary = summary.str();
  return outcome;
}

int run_experiment_file(const std::filesystem::path& config_path, const RunOptions& options, std::ostream& out,
                        std::ostream& err) {
  std::optional<ExperimentConfig> cfg;
  try {
    cfg = load_config(config_path);
  } catch (const ConfigError& e) {
    err << "invalid config: " << e.what() << "\n";
    return 2;
  }
  if (options.seed_override) cfg->base_seed = *options.seed_override;
  std::string dir = "sgdstop_out";
  if (options.out_dir)
    dir = *options.out_dir;
  else if (cfg->output_dir)
    dir = *cfg->output_dir;
  else if (const char* env = std::getenv("SGDSTOP_OUT"); env && *env)
    dir = env;
  const auto outcome = run_experiment(*cfg, dir, options.threads);
  out << outcome.summary << "\n";
  out << (outcome.exit_code == 0 ? "all checks passed" : "FAILED") << " -> " << dir << "\n";
  return outcome.exit_code;
}

}  // namespace sgdstop
