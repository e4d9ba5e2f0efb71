#include "sgdstop/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <boost/math/special_functions/gamma.hpp>

#include "sgdstop/json_util.hpp"

namespace sgdstop {

namespace {

constexpr std::int64_t kMonotonicityPrefix = 1'000'000;
constexpr double kInf = std::numeric_limits<double>::infinity();

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double log_power_value(double q, double scale, double u) { return scale * std::log(u) / std::pow(u, q); }

// Verdicts for eps_t ~ (log t)^k / t^q with k in {0, 1}: the log factor never
// moves the boundary of the p-series test.
Classification classify_power_like(double q, double p, const char* form) {
  Classification c;
  const bool diverges = q <= 1.0;
  c.robbins_monro = (diverges && 2.0 * q > 1.0) ? Verdict::yes : Verdict::no;
  c.relaxed = (diverges && q * p > 1.0) ? Verdict::yes : Verdict::no;
  std::ostringstream os;
  os << "p-series test on " << form << ": sum eps diverges iff q <= 1 (q = " << q
     << "); sum eps^s converges iff q*s > 1 (q*2 = " << 2.0 * q << ", q*p = " << q * p << ")";
  c.governing_test = os.str();
  return c;
}

}  // namespace

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::yes: return "yes";
    case Verdict::no: return "no";
    case Verdict::unknown: return "unknown";
  }
  return "unknown";
}

StepSizeSchedule::StepSizeSchedule(Family family, double p_exponent)
    : family_(std::move(family)), p_(p_exponent) {
  if (!(p_ > 2.0) || !std::isfinite(p_)) throw std::invalid_argument("schedule p exponent must be > 2");
  std::visit(overloaded{
                 [](const PowerLaw& f) {
                   if (!(f.q > 0.0) || !(f.scale > 0.0) || !std::isfinite(f.q) || !std::isfinite(f.scale))
                     throw std::invalid_argument("power schedule needs q > 0 and scale > 0");
                 },
                 [this](const LogPowerLaw& f) {
                   if (!(f.q > 0.0) || !(f.scale > 0.0) || !std::isfinite(f.q) || !std::isfinite(f.scale))
                     throw std::invalid_argument("log_power schedule needs q > 0 and scale > 0");
                   log_t0_ = std::max(3.0, std::exp(1.0 / f.q));
                   if (!std::isfinite(log_t0_))
                     throw std::invalid_argument("log_power schedule q too small for a finite clamp point");
                   double prev = kInf;
                   for (std::int64_t t = 1; t <= kMonotonicityPrefix; ++t) {
                     const double e = log_power_value(f.q, f.scale, std::max(static_cast<double>(t), log_t0_));
                     if (!(e > 0.0) || e > prev)
                       throw std::logic_error("log_power schedule failed the monotonicity check at t = " +
                                              std::to_string(t));
                     prev = e;
                   }
                 },
                 [](const ConstantStep& f) {
                   if (!(f.value > 0.0) || !std::isfinite(f.value))
                     throw std::invalid_argument("constant schedule needs value > 0");
                 },
                 [](const TableSteps& f) {
                   if (f.values.empty()) throw std::invalid_argument("table schedule is empty");
                   for (std::size_t i = 0; i < f.values.size(); ++i) {
                     if (!(f.values[i] > 0.0) || !std::isfinite(f.values[i]))
                       throw std::invalid_argument("table schedule entry " + std::to_string(i + 1) +
                                                   " is not positive");
                     if (i > 0 && f.values[i] > f.values[i - 1])
                       throw std::invalid_argument("table schedule increases at entry " + std::to_string(i + 1));
                   }
                 },
             },
             family_);
}

StepSizeSchedule StepSizeSchedule::power(double q, double scale, double p) {
  return StepSizeSchedule(PowerLaw{q, scale}, p);
}
StepSizeSchedule StepSizeSchedule::log_power(double q, double scale, double p) {
  return StepSizeSchedule(LogPowerLaw{q, scale}, p);
}
StepSizeSchedule StepSizeSchedule::constant(double value, double p) {
  return StepSizeSchedule(ConstantStep{value}, p);
}
StepSizeSchedule StepSizeSchedule::table(std::vector<double> values, double p) {
  return StepSizeSchedule(TableSteps{std::move(values)}, p);
}

double StepSizeSchedule::step_size(std::int64_t t) const {
  if (t < 1) throw std::out_of_range("step index must be >= 1");
  return std::visit(overloaded{
                        [t](const PowerLaw& f) { return f.scale / std::pow(static_cast<double>(t), f.q); },
                        [t, this](const LogPowerLaw& f) {
                          return log_power_value(f.q, f.scale, std::max(static_cast<double>(t), log_t0_));
                        },
                        [](const ConstantStep& f) { return f.value; },
                        [t](const TableSteps& f) {
                          if (static_cast<std::size_t>(t) > f.values.size())
                            throw std::out_of_range("step index " + std::to_string(t) + " past table length " +
                                                    std::to_string(f.values.size()));
                          return f.values[static_cast<std::size_t>(t - 1)];
                        },
                    },
                    family_);
}

Classification StepSizeSchedule::classify() const {
  return std::visit(overloaded{
                        [this](const PowerLaw& f) { return classify_power_like(f.q, p_, "1/t^q"); },
                        [this](const LogPowerLaw& f) { return classify_power_like(f.q, p_, "log(t)/t^q"); },
                        [](const ConstantStep&) {
                          return Classification{Verdict::no, Verdict::no,
                                                "constant step: sum eps^s diverges for every s"};
                        },
                        [](const TableSteps&) {
                          return Classification{Verdict::unknown, Verdict::unknown,
                                                "finite table: summability cannot be decided from data"};
                        },
                    },
                    family_);
}

double StepSizeSchedule::partial_sum(double power, std::int64_t t) const {
  if (t < 0) throw std::out_of_range("partial_sum needs t >= 0");
  double acc = 0.0;
  for (std::int64_t k = 1; k <= t; ++k) acc += std::pow(step_size(k), power);
  return acc;
}

double StepSizeSchedule::tail_bound(double power, std::int64_t n) const {
  if (n < 1) throw std::out_of_range("tail_bound needs n >= 1");
  return std::visit(
      overloaded{
          [&](const PowerLaw& f) {
            const double a = f.q * power;
            if (a <= 1.0) return kInf;
            return std::pow(f.scale, power) * std::pow(static_cast<double>(n), 1.0 - a) / (a - 1.0);
          },
          [&](const LogPowerLaw& f) {
            const double a = f.q * power;
            if (a <= 1.0) return kInf;
            // (log t)^s t^-a decreases once log t > s/a = 1/q, i.e. past the clamp point.
            const auto start = std::max(n, static_cast<std::int64_t>(std::ceil(log_t0_)));
            double head = 0.0;
            for (std::int64_t k = n + 1; k <= start; ++k) head += std::pow(step_size(k), power);
            const double x = (a - 1.0) * std::log(static_cast<double>(start));
            const double integral = boost::math::tgamma(power + 1.0, x) / std::pow(a - 1.0, power + 1.0);
            return head + std::pow(f.scale, power) * integral;
          },
          [](const ConstantStep&) { return kInf; },
          [](const TableSteps&) -> double {
            throw std::invalid_argument("tail bound is undefined for table schedules");
          },
      },
      family_);
}

double StepSizeSchedule::sigma_epsilon(std::int64_t t) const {
  if (t < 0) throw std::out_of_range("sigma_epsilon needs t >= 0");
  if (const auto* c = std::get_if<ConstantStep>(&family_)) return c->value * static_cast<double>(t);
  return partial_sum(1.0, t);
}

std::int64_t StepSizeSchedule::m_of(double s) const {
  if (!(s >= 0.0)) throw std::out_of_range("m_of needs s >= 0");
  if (const auto* c = std::get_if<ConstantStep>(&family_)) {
    auto j = static_cast<std::int64_t>(std::floor(s / c->value));
    while (c->value * static_cast<double>(j + 1) <= s) ++j;
    while (j > 0 && c->value * static_cast<double>(j) > s) --j;
    return j;
  }
  const auto* table = std::get_if<TableSteps>(&family_);
  double acc = 0.0;
  std::int64_t j = 0;
  while (true) {
    if (table && static_cast<std::size_t>(j) == table->values.size())
      throw std::out_of_range("m_of exceeds the table schedule's horizon");
    const double next = acc + step_size(j + 1);
    if (next > s) return j;
    acc = next;
    ++j;
  }
}

nlohmann::json StepSizeSchedule::to_json() const {
  nlohmann::json j = std::visit(overloaded{
                                    [](const PowerLaw& f) {
                                      return nlohmann::json{{"family", "power"}, {"q", f.q}, {"scale", f.scale}};
                                    },
                                    [](const LogPowerLaw& f) {
                                      return nlohmann::json{
                                          {"family", "log_power"}, {"q", f.q}, {"scale", f.scale}};
                                    },
                                    [](const ConstantStep& f) {
                                      return nlohmann::json{{"family", "constant"}, {"value", f.value}};
                                    },
                                    [](const TableSteps& f) {
                                      return nlohmann::json{{"family", "table"}, {"values", f.values}};
                                    },
                                },
                                family_);
  j["p"] = p_;
  return j;
}

StepSizeSchedule StepSizeSchedule::from_json(const nlohmann::json& j, const std::string& path) {
  StrictObject obj(j, path);
  const auto family = obj.required<std::string>("family");
  const double p = obj.optional<double>("p", 3.0);
  try {
    if (family == "power" || family == "log_power") {
      const double q = obj.required<double>("q");
      const double scale = obj.optional<double>("scale", 1.0);
      obj.finish();
      return family == "power" ? power(q, scale, p) : log_power(q, scale, p);
    }
    if (family == "constant") {
      const double v = obj.required<double>("value");
      obj.finish();
      return constant(v, p);
    }
    if (family == "table") {
      auto values = obj.required<std::vector<double>>("values");
      obj.finish();
      return table(std::move(values), p);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
  throw ConfigError(path + "/family", "unknown schedule family '" + family + "'");
}

}  // namespace sgdstop
