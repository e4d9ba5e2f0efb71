#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgdstop/diagnostics.hpp"
#include "sgdstop/engine.hpp"

namespace sgdstop {

/// Starting point rule: origin, a fixed vector, or uniform in a ball of the
/// given radius drawn from the trajectory seed.
struct Theta1Policy {
  enum class Kind { origin, fixed, ball };
  Kind kind = Kind::origin;
  Vector value;
  double radius = 1.0;

  Vector initial(int d, std::uint64_t seed) const;
  nlohmann::json to_json() const;
  static Theta1Policy from_json(const nlohmann::json& j, int d, const std::string& path = "/theta1");
};

struct EnsembleSetup {
  ProblemPtr problem;
  GradientOracle oracle;
  StepSizeSchedule schedule;
  Theta1Policy theta1;
  std::int64_t T = 1;
  RecordPolicy record;
};

struct IndicatorSpec {
  double y;
  int m;
};

struct ThetaWindowSpec {
  std::vector<std::int64_t> times;
  double window = 1.0;
  double delta = 0.05;
};

/// What to compute per trajectory while its records are still in memory.
struct EnsemblePlan {
  std::int64_t n = 2;
  std::uint64_t base_seed = 0;
  unsigned threads = 0;  // 0: hardware concurrency
  int n_checkpoints = 8;
  double as_tolerance = 0.1;
  std::vector<Interval> upcross_intervals;
  std::vector<double> nus;
  std::vector<RecursiveSpec> recursive;
  std::vector<IndicatorSpec> indicator;
  std::optional<ThetaWindowSpec> theta_window;
  bool keep_trajectories = false;
};

/// Checkpoints ceil(T / 2^j), j = 0..count-1, ascending and distinct.
std::vector<std::int64_t> geometric_checkpoints(std::int64_t T, int count);

struct UpcrossCounts {
  std::int64_t half = 0;  // over t <= ceil(T/2)
  std::int64_t full = 0;
  std::int64_t bound = 0;  // ladder bound over the full horizon
};

struct TrajectorySummary {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  bool diverged = false;
  std::int64_t last_finite_step = 0;
  double final_f = 0.0;
  // per checkpoint; NaN past a divergence
  std::vector<double> grad_sq;
  std::vector<double> f_gap;
  std::vector<double> mart_inc;
  std::vector<double> tail_sup_grad;  // sup ||grad f|| over [ceil(t/2), t]
  double sup_grad_sq = 0.0;
  double sup_grad_sq_half = 0.0;
  std::vector<UpcrossCounts> upcross;
  std::vector<double> truncated_sums;
  DescentResidualSummary descent;
  std::vector<RecursiveParts> recursive;
  std::vector<IndicatorDescentSummary> indicator;
  std::vector<WindowSup> theta;
};

TrajectorySummary summarize(const Trajectory& traj, const EnsembleSetup& setup, const EnsemblePlan& plan,
                            const std::vector<std::int64_t>& checkpoints);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::int64_t n = 0;
  nlohmann::json to_json() const;
};

MeanSe mean_and_stderr(const std::vector<double>& xs);

struct CheckpointStats {
  std::int64_t t;
  double mean_grad_sq, stderr_grad_sq;
  double median_f_gap;
  double as_fraction;
  double mart_mean, mart_se;
};

struct UpcrossStats {
  Interval interval;
  double saturated_fraction;  // full == half
  double mean_half, mean_full;
  std::int64_t bound_violations;
};

struct EnsembleStats {
  std::int64_t n_trajectories = 0;
  std::int64_t failed_count = 0;
  std::int64_t diverged_count = 0;
  std::int64_t n_used = 0;  // neither failed nor diverged
  std::vector<CheckpointStats> checkpoints;
  double as_converged_fraction = 0.0;
  double as_tolerance = 0.0;
  MeanSe sup_grad_sq;
  MeanSe sup_grad_sq_half;
  double grad_sq_slope = 0.0;  // log-log least squares over the last three checkpoints
  std::vector<UpcrossStats> upcross;
  std::vector<double> nus;
  std::vector<MeanSe> truncated_sums;
  double descent_max_scaled = -std::numeric_limits<double>::infinity();
  std::int64_t descent_exceeding = 0;
  std::vector<MeanSe> indicator_residual;
  std::vector<std::int64_t> theta_times;
  std::vector<double> theta_median;
  std::int64_t theta_clipped = 0;

  nlohmann::json to_json() const;
  /// `t,mean_grad_sq,stderr,median_f_gap,as_fraction`
  void write_checkpoints_csv(std::ostream& out) const;
};

/// Pure fold over summaries; sorted by seed first, so completion order never
/// changes the result.
EnsembleStats aggregate(std::vector<TrajectorySummary> summaries, const std::vector<std::int64_t>& checkpoints,
                        const EnsemblePlan& plan);

struct CriticalMatch {
  CheckStatus status = CheckStatus::inconclusive;
  double fraction = 0.0;
  std::int64_t n_used = 0;
  std::int64_t n_excluded = 0;  // diverged or failed
  std::vector<std::optional<double>> matched;  // per used trajectory, seed order
  nlohmann::json to_json() const;
};

CriticalMatch critical_value_match(const std::vector<TrajectorySummary>& summaries, const Problem& problem,
                                   double tolerance);

struct EnsembleResult {
  std::vector<std::int64_t> checkpoints;
  EnsembleStats stats;
  std::vector<TrajectorySummary> summaries;  // seed order
  std::vector<Trajectory> trajectories;      // seed order, when kept
  std::vector<RecursiveResult> recursive;
  std::vector<std::optional<CNuConstants>> c_nu;
  Classification classification;
  std::string guarantee;  // "relaxed conditions hold" or "no guarantee"
  nlohmann::json to_json() const;
};

/// Invoked from worker threads once per finished trajectory.
using TrajectoryCallback = std::function<void(const Trajectory&)>;

/// Runs seeds base_seed..base_seed+n-1 on a work pool. A throwing seed
/// becomes a failed summary instead of aborting the ensemble.
EnsembleResult run_ensemble(const EnsembleSetup& setup, const EnsemblePlan& plan,
                            const TrajectoryCallback& on_trajectory = {});

/// Two-point law: P(zeta = 0) = 1 - 1/n^2, P(zeta = n) = 1/n^2.
struct CounterexampleLaw {
  std::int64_t n;
  double p_zero;
  double atom;
  double second_moment_exact;

  double sample(RandomStream& rng) const;
};

CounterexampleLaw counterexample_distribution(std::int64_t n);

struct TailEventEstimate {
  std::int64_t k, horizon, paths;
  double fraction;  // paths with a nonzero zeta_n for some k < n <= horizon
  double stderr_;
  double tail_sum;     // sum_{k<n<=horizon} 1/n^2
  double exact;        // 1 - prod (1 - 1/n^2) = 1 - k(N+1)/((k+1)N)
  bool within_3se;     // |fraction - tail_sum| <= 3 stderr
  bool union_bound_holds;  // fraction <= tail_sum + 3 stderr
  nlohmann::json to_json() const;
};

/// Monte Carlo over independent paths (zeta_n)_{n <= horizon}, zeta_n drawn
/// from counterexample_distribution(n).
TailEventEstimate counterexample_tail_event(std::int64_t k, std::int64_t horizon, std::int64_t paths,
                                            std::uint64_t seed);

}  // namespace sgdstop
