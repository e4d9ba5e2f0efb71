#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace sgdstop {

enum class Verdict { yes, no, unknown };

std::string to_string(Verdict v);

/// Summability verdicts for a step-size schedule.
struct Classification {
  Verdict robbins_monro = Verdict::unknown;  // sum eps = inf and sum eps^2 < inf
  Verdict relaxed = Verdict::unknown;        // sum eps = inf and sum eps^p < inf
  std::string governing_test;
};

/// eps_t = scale / t^q
struct PowerLaw {
  double q;
  double scale = 1.0;
};

/// eps_t = scale * log(u) / u^q with u = max(t, t0), t0 = max(3, e^(1/q)).
/// The clamp keeps eps_t positive and nonincreasing; for t >= t0 the
/// schedule is exactly scale * log(t) / t^q.
struct LogPowerLaw {
  double q;
  double scale = 1.0;
};

struct ConstantStep {
  double value;
};

/// Explicit finite sequence eps_1..eps_n.
struct TableSteps {
  std::vector<double> values;
};

/// Positive, nonincreasing deterministic step-size rule with the exponent p
/// against which sum eps_t^p is judged. Immutable after construction.
class StepSizeSchedule {
public:
  using Family = std::variant<PowerLaw, LogPowerLaw, ConstantStep, TableSteps>;

  StepSizeSchedule(Family family, double p_exponent);

  static StepSizeSchedule power(double q, double scale = 1.0, double p = 3.0);
  static StepSizeSchedule log_power(double q, double scale = 1.0, double p = 3.0);
  static StepSizeSchedule constant(double value, double p = 3.0);
  static StepSizeSchedule table(std::vector<double> values, double p = 3.0);

  const Family& family() const { return family_; }
  double p_exponent() const { return p_; }
  bool is_table() const { return std::holds_alternative<TableSteps>(family_); }

  /// eps_t for t >= 1. Throws std::out_of_range for t < 1 or past a table's end.
  double step_size(std::int64_t t) const;

  Classification classify() const;

  /// sum_{k=1..t} eps_k^power by direct accumulation.
  double partial_sum(double power, std::int64_t t) const;

  /// Upper bound on sum_{k>n} eps_k^power from the integral test.
  /// Returns +inf when the series diverges; throws for table schedules.
  double tail_bound(double power, std::int64_t n) const;

  /// Sigma(t) = sum_{k=1..t} eps_k, Sigma(0) = 0.
  double sigma_epsilon(std::int64_t t) const;

  /// m(s) = max{ j >= 0 : Sigma(j) <= s }.
  std::int64_t m_of(double s) const;

  nlohmann::json to_json() const;
  static StepSizeSchedule from_json(const nlohmann::json& j, const std::string& path = "/schedule");

private:
  Family family_;
  double p_;
  double log_t0_ = 0.0;
};

}  // namespace sgdstop
