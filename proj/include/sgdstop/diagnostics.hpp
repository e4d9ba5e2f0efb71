#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgdstop/engine.hpp"
#include "sgdstop/oracle.hpp"
#include "sgdstop/problem.hpp"
#include "sgdstop/schedule.hpp"

namespace sgdstop {

constexpr std::int64_t kNever = std::numeric_limits<std::int64_t>::max();

/// [e, o) with e < o; o may be +inf.
struct Interval {
  double left;
  double right;

  Interval(double e, double o);
};

/// Disjoint up-crossings of `interval`: a start below e, an end at or above o
/// and every value strictly between them inside [e, o). Greedy left to right.
std::int64_t count_upcrossings(std::span<const double> values, const Interval& interval);

/// First-passage times of x_t = f(theta_t) - f* between levels h1 and h2,
/// 1-based. Unreached times are kNever.
///   mu_1     = min{t >= 1          : x_t >= h1}
///   mu_{3k-1} = min{t >= mu_{3k-2} : x_t >= h2 or x_t < h1}
///   mu_{3k}   = min{t >= mu_{3k-1} : x_t < h1}
///   mu_{3k+1} = min{t >= mu_{3k}   : x_t >= h1}
class StoppingTimeLadder {
public:
  StoppingTimeLadder(double h1, double h2, std::int64_t horizon, std::vector<std::int64_t> finite_times,
                     std::uint64_t source_fingerprint = 0);

  double h1() const { return h1_; }
  double h2() const { return h2_; }
  std::int64_t horizon() const { return horizon_; }
  std::uint64_t source_fingerprint() const { return source_; }

  /// Finite times mu_1, mu_2, ... in order; everything after is kNever.
  const std::vector<std::int64_t>& finite_times() const { return times_; }
  /// mu_n (n >= 1), kNever when unreached.
  std::int64_t time(std::size_t n) const;
  /// mu_{n,T} = min(mu_n, T).
  std::int64_t truncated(std::size_t n) const;
  /// Number of k with mu_{3k-2} finite.
  std::size_t excursion_count() const { return (times_.size() + 2) / 3; }

  nlohmann::json to_json() const;

private:
  double h1_, h2_;
  std::int64_t horizon_;
  std::vector<std::int64_t> times_;
  std::uint64_t source_;
};

/// Ladder over gaps[0..T-1] (gaps[t-1] = f(theta_t) - f*). Requires h1 < h2.
StoppingTimeLadder build_ladder(std::span<const double> gaps, double h1, double h2, std::int64_t T);
StoppingTimeLadder build_ladder(const Trajectory& traj, double f_star, double h1, double h2, std::int64_t T);

/// The up-crossing bound 1 + #{k >= 2 : mu_{3k-2} finite, x(mu_{3k-1,T}) >= h2}.
std::int64_t upcrossing_bound(std::span<const double> gaps, const StoppingTimeLadder& ladder);

/// min{t >= t0 : grad_norm_t <= upsilon}, nullopt when absent.
std::optional<std::int64_t> hitting_time(std::span<const double> grad_norms, std::int64_t t0, double upsilon);
std::optional<std::int64_t> hitting_time(const Trajectory& traj, std::int64_t t0, double upsilon);

/// sum_k sum_{t = mu_{3k-2,T}}^{mu_{3k-1,T} - 1} eps_t^m ||grad f(theta_t)||^2.
double grad_quadratic_variation(std::span<const double> eps, std::span<const double> grad_norms,
                                const StoppingTimeLadder& ladder, int m);
/// Throws when the ladder was built from a different trajectory.
double grad_quadratic_variation(const Trajectory& traj, const StoppingTimeLadder& ladder, int m);

struct DescentResidualSummary {
  double max_residual = -std::numeric_limits<double>::infinity();
  double max_scaled = -std::numeric_limits<double>::infinity();  // rho_t / (1 + |f_t|)
  std::int64_t count_exceeding = 0;
  std::int64_t steps = 0;
  nlohmann::json to_json() const;
};

/// rho_t = (f_{t+1} - f_t) + eps_t ||grad f||^2 - M_t - (L/2) eps_t^2 ||g_t||^2 using
/// the problem's certified L; `count_exceeding` counts rho_t > tol_scale (1 + |f_t|).
DescentResidualSummary descent_residuals(const Trajectory& traj, const Problem& problem, double tol_scale = 1e-9);

/// sum_t (1[x_t < D] |x_{t+1} - x_t| - nu)_+ over a gap sequence of length T+1.
double truncated_increment_sum(std::span<const double> gaps, double d_eta, double nu);
double truncated_increment_sum(const Trajectory& traj, const Problem& problem, double nu);

struct CNuConstants {
  double c_bar = 0.0;
  double power_sum = 0.0;          // sum eps^p, partial plus tail
  double power_sum_partial = 0.0;  // through n_partial
  double tail_bound = 0.0;
  double c_nu = 0.0;
  std::string note;
  nlohmann::json to_json() const;
};

/// C_bar_nu = (1 + D/nu) L (2/p) (4 (1 + D/nu) L (1 - 2/p) / nu)^((p-2)/2).
double compute_C_nu_bar(double nu, double d_eta, double lipschitz, double p);
/// C_nu = C_bar_nu M0^p sum eps^p. Throws std::domain_error unless the
/// schedule is an analytic family classified relaxed.
CNuConstants compute_C_nu(double nu, double d_eta, double lipschitz, double p, double m0,
                          const StepSizeSchedule& schedule, std::int64_t n_partial = 1'000'000);

struct C1C2 {
  double c1;
  double c2;
};

/// C1 = ((3bL/(b-a) + L/2) 2G/delta^2 + 12 L b^2 G/(b-a)^2)(1 + 1/delta^2)
/// C2 = 6ab/(b-a) eps_1^((m-1)/2) (eps_1^((m-1)/2) + eps_1^(m-1)) C_half_gap
C1C2 compute_C1_C2(double a, double b, int m, double lipschitz, double G, double delta_ab, double eps1,
                   double c_half_gap);
C1C2 compute_C1_C2(double a, double b, int m, double lipschitz, double G, double delta_ab,
                   const StepSizeSchedule& schedule, double c_half_gap);

/// Single-trajectory ingredients of the recursive inequality.
struct RecursiveParts {
  double lhs = 0.0;           // [grad f]^m over the (b, c) ladder
  double rhs_variation = 0.0; // [grad f]^(m+1) over the (a, b) ladder
  double min_grad_in_band = std::numeric_limits<double>::infinity();  // f - f* in [a, c)
  bool lhs_has_excursion = false;
  bool rhs_has_excursion = false;
};

struct RecursiveSpec {
  double a, b, c;
  int m;
};

RecursiveParts recursive_parts(const Trajectory& traj, double f_star, const RecursiveSpec& spec);
RecursiveParts recursive_parts(std::span<const double> gaps, std::span<const double> eps,
                               std::span<const double> grad_norms, const RecursiveSpec& spec);

enum class CheckStatus { pass, fail, inconclusive };
std::string to_string(CheckStatus s);

struct RecursiveOptions {
  std::optional<double> delta_ab;        // overrides the sampled estimate
  std::optional<double> c_half_gap;      // overrides C_{(b-a)/2}
  double c1_scale = 1.0;                 // negative controls scale C1
  std::int64_t n_partial = 1'000'000;
};

struct RecursiveResult {
  double lhs = 0.0, lhs_se = 0.0;
  double rhs = 0.0, rhs_se = 0.0;
  double c1 = 0.0, c2 = 0.0;
  double delta_ab = 0.0;
  std::int64_t n = 0;
  CheckStatus status = CheckStatus::inconclusive;
  std::string note;
  nlohmann::json to_json() const;
};

/// Ensemble-mean check of [grad f]^m_{b,c} <= C1 [grad f]^(m+1)_{a,b} + C2 with
/// pass iff lhs <= rhs + 2 sqrt(se_lhs^2 + se_rhs^2).
RecursiveResult evaluate_recursive_inequality(std::span<const RecursiveParts> parts, const RecursiveSpec& spec,
                                              const Problem& problem, const GradientOracle& oracle,
                                              const StepSizeSchedule& schedule, const RecursiveOptions& options = {});
RecursiveResult check_recursive_inequality(std::span<const Trajectory> trajectories, const RecursiveSpec& spec,
                                           const Problem& problem, const GradientOracle& oracle,
                                           const StepSizeSchedule& schedule, const RecursiveOptions& options = {});

/// 1[theta_t in S_delta] for every record, from the certified critical values.
std::vector<bool> s_delta_flags(const Trajectory& traj, const Problem& problem, double delta);

struct WindowSup {
  double value = 0.0;
  std::int64_t window_end = 0;
  bool clipped = false;  // the window ran past the recorded horizon
};

/// Theta_t = sup_{k in [t, m(Sigma(t) + T_window)]} ||sum_{i=t}^k 1[S_delta]_i v_i||^(2p-2).
/// Requires noise vectors retained by the record policy.
WindowSup martingale_window_sup(const Trajectory& traj, std::int64_t t, double t_window, const std::vector<bool>& in_s_delta,
                                double p);

struct LossBoundSummary {
  double max_violation = -std::numeric_limits<double>::infinity();
  double max_relative = -std::numeric_limits<double>::infinity();
  bool pass = true;
  nlohmann::json to_json() const;
};

/// max ||grad f||^2 - 2L(f - f*); pass iff every violation <= 1e-9 max(1, 2L(f - f*)).
LossBoundSummary loss_bound_check(const Problem& problem, const std::vector<Vector>& points);

struct IndicatorDescentSummary {
  double residual_sum = 0.0;        // sum of the weak-growth (in-expectation) form
  double max_pointwise = -std::numeric_limits<double>::infinity();  // realized form with (L/2) eps^(m+1) ||g||^2
  std::int64_t active_steps = 0;
  nlohmann::json to_json() const;
};

/// Residual lhs - rhs of the indicator descent inequality with 1[||grad f||^2 >= y].
IndicatorDescentSummary indicator_descent_check(const Trajectory& traj, const Problem& problem, double G, double y,
                                                int m);

/// Named result of one check.
struct DiagnosticEntry {
  std::string check_name;
  nlohmann::json params;
  nlohmann::json value;
  nlohmann::json tolerance;
  std::optional<bool> pass;
  std::optional<double> stderr_halfwidth;
  nlohmann::json to_json() const;
};

struct DiagnosticsReport {
  std::vector<DiagnosticEntry> entries;

  void add(DiagnosticEntry e) { entries.push_back(std::move(e)); }
  bool all_pass() const;
  nlohmann::json to_json() const;
};

}  // namespace sgdstop
