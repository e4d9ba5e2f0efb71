#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgdstop/oracle.hpp"
#include "sgdstop/problem.hpp"
#include "sgdstop/schedule.hpp"

namespace sgdstop {

/// Statistics of step t, all evaluated at theta_t before the update.
struct StepRecord {
  std::int64_t t;
  double eps;
  double f;
  double grad_norm;
  double mart_inc;  // eps_t grad f(theta_t)^T (grad f(theta_t) - g_t)
  double g_norm_sq;

  bool operator==(const StepRecord&) const = default;
};

struct RecordPolicy {
  /// Retain theta_1..theta_T when d * T <= iterate_budget (doubles).
  bool keep_iterates = false;
  std::int64_t iterate_budget = 10'000'000;
  /// Retain v_t = eps_t (grad f(theta_t) - g_t), needed for the windowed
  /// martingale supremum.
  bool keep_noise = false;
};

struct Trajectory {
  std::uint64_t seed = 0;
  std::uint64_t setup_fingerprint = 0;  // problem, oracle, schedule, theta_1
  std::uint64_t fingerprint = 0;        // setup plus seed and T
  RecordPolicy policy;
  Vector theta1;
  std::vector<StepRecord> records;
  std::vector<Vector> iterates;  // theta_1..theta_T when retained
  std::vector<Vector> noise;     // v_1..v_T when retained
  bool iterates_retained = false;
  Vector final_point;  // theta_{T+1}
  double final_f = 0.0;
  bool diverged = false;
  std::int64_t last_finite_step = 0;
  std::string rng_state;

  std::int64_t length() const { return static_cast<std::int64_t>(records.size()); }
};

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

std::uint64_t setup_fingerprint(const Problem& problem, const GradientOracle& oracle,
                                const StepSizeSchedule& schedule, const Vector& theta1);

/// Plain SGD: theta_{t+1} = theta_t - eps_t g_t for t = 1..T. A non-finite
/// value ends the run early with `diverged` set.
Trajectory run(const Problem& problem, const GradientOracle& oracle, const StepSizeSchedule& schedule,
               const Vector& theta1, std::int64_t T, std::uint64_t seed, const RecordPolicy& policy = {});

/// Continue `traj` for `additional` steps; bit-identical to a single run of
/// the combined length. Throws on fingerprint mismatch or a diverged input.
Trajectory resume(const Problem& problem, const GradientOracle& oracle, const StepSizeSchedule& schedule,
                  const Trajectory& traj, std::int64_t additional);

/// Header `t,eps,f,grad_norm,mart_inc,g_norm_sq`, numbers as %.17g.
void write_records_csv(const Trajectory& traj, std::ostream& out);

/// Exact, self-describing replay record (doubles as hexfloat strings).
nlohmann::json replay_state(const Trajectory& traj);
/// Trajectory without records, positioned to resume.
Trajectory trajectory_from_replay_state(const nlohmann::json& j);

std::string format_double(double v);
std::string hexfloat(double v);
double parse_hexfloat(const std::string& s);

}  // namespace sgdstop
