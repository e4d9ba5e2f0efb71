#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgdstop/ensemble.hpp"

namespace sgdstop {

/// One enabled check with every parameter filled in.
struct DiagnosticSpec {
  std::string check;
  nlohmann::json params;
};

struct ExperimentConfig {
  EnsembleSetup setup;
  std::int64_t n_trajectories = 2;
  std::uint64_t base_seed = 0;
  int checkpoints = 8;
  bool require_relaxed = false;
  double max_divergence_fraction = 0.0;
  bool per_trajectory_csv = false;
  std::optional<std::string> output_dir{};
  std::vector<DiagnosticSpec> diagnostics{};

  /// Semantic content only: no output location, no thread count.
  nlohmann::json canonical() const;
  std::uint64_t hash() const;
};

/// Strict parse; throws ConfigError naming the offending field.
ExperimentConfig parse_config(const nlohmann::json& j);
/// Parse errors carry file:line:column.
ExperimentConfig load_config(const std::filesystem::path& path);

std::vector<std::string> known_checks();

struct ExperimentOutcome {
  int exit_code = 0;  // 0 pass, 1 check failure or excess divergence
  std::string summary;
  DiagnosticsReport report;
  EnsembleResult result;
};

/// Runs the ensemble and writes ensemble.json, checkpoints.csv,
/// diagnostics.json, manifest.json and optional trajectories/seed_<k>.csv.
ExperimentOutcome run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                 unsigned threads = 0);

struct RunOptions {
  std::optional<std::string> out_dir;
  unsigned threads = 0;
  std::optional<std::uint64_t> seed_override;
};

/// File-level entry with the exit-code contract (0 pass, 1 check failure,
/// 2 invalid config). Output directory: flag, then config, then
/// $SGDSTOP_OUT, then ./sgdstop_out.
int run_experiment_file(const std::filesystem::path& config_path, const RunOptions& options, std::ostream& out,
                        std::ostream& err);

}  // namespace sgdstop
