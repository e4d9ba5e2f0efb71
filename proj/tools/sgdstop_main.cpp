#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sgdstop/experiment.hpp"
#include "sgdstop/schedule.hpp"

namespace {

int classify_command(const std::string& family, double q, double p, double scale, double value,
                     const std::vector<double>& values) {
  using sgdstop::StepSizeSchedule;
  try {
    StepSizeSchedule schedule = [&] {
      if (family == "power") return StepSizeSchedule::power(q, scale, p);
      if (family == "log_power") return StepSizeSchedule::log_power(q, scale, p);
      if (family == "constant") return StepSizeSchedule::constant(value, p);
      if (family == "table") return StepSizeSchedule::table(values, p);
      throw std::invalid_argument("unknown family '" + family + "'");
    }();
    const auto c = schedule.classify();
    std::cout << "RM: " << sgdstop::to_string(c.robbins_monro) << ", relaxed: " << sgdstop::to_string(c.relaxed)
              << "\n"
              << "test: " << c.governing_test << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "classify: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SGD stopping-time diagnostics"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run an experiment config and write reports");
  std::string config_path;
  std::string out_dir;
  unsigned threads = 0;
  std::uint64_t seed_override = 0;
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  auto* out_opt = run->add_option("--out", out_dir, "Output directory");
  run->add_option("--threads", threads, "Worker threads (0 = auto)");
  auto* seed_opt = run->add_option("--seed-override", seed_override, "Replace the config's base_seed");

  auto* classify = app.add_subcommand("classify", "Classify a step-size schedule");
  std::string family = "power";
  double q = 1.0, p = 3.0, scale = 1.0, value = 0.1;
  std::vector<double> values;
  classify->add_option("--family", family, "power | log_power | constant | table")
      ->check(CLI::IsMember({"power", "log_power", "constant", "table"}));
  classify->add_option("--q", q, "Decay exponent");
  classify->add_option("--p", p, "Exponent p > 2");
  classify->add_option("--scale", scale, "Scale factor");
  classify->add_option("--value", value, "Constant step");
  classify->add_option("--values", values, "Table entries");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*classify) return classify_command(family, q, p, scale, value, values);

  sgdstop::RunOptions options;
  if (*out_opt) options.out_dir = out_dir;
  if (*seed_opt) options.seed_override = seed_override;
  options.threads = threads;
  try {
    return sgdstop::run_experiment_file(config_path, options, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
