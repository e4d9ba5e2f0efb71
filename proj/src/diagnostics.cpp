#include "sgdstop/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sgdstop {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> gaps_of(const Trajectory& traj, double f_star, bool include_final) {
  std::vector<double> gaps;
  gaps.reserve(traj.records.size() + 1);
  for (const auto& r : traj.records) gaps.push_back(r.f - f_star);
  if (include_final) gaps.push_back(traj.final_f - f_star);
  return gaps;
}

std::vector<double> eps_of(const Trajectory& traj) {
  std::vector<double> v;
  v.reserve(traj.records.size());
  for (const auto& r : traj.records) v.push_back(r.eps);
  return v;
}

std::vector<double> grad_norms_of(const Trajectory& traj) {
  std::vector<double> v;
  v.reserve(traj.records.size());
  for (const auto& r : traj.records) v.push_back(r.grad_norm);
  return v;
}

// f(theta_{t+1}) for record index i (0-based).
double next_f(const Trajectory& traj, std::size_t i) {
  return i + 1 < traj.records.size() ? traj.records[i + 1].f : traj.final_f;
}

std::pair<double, double> mean_se(const std::vector<double>& xs) {
  const auto n = static_cast<double>(xs.size());
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace

Interval::Interval(double e, double o) : left(e), right(o) {
  if (!(e < o) || std::isnan(e) || std::isnan(o)) throw std::invalid_argument("interval needs left < right");
}

std::int64_t count_upcrossings(std::span<const double> values, const Interval& interval) {
  std::int64_t count = 0;
  bool armed = false;
  for (double x : values) {
    if (x < interval.left) {
      armed = true;
    } else if (x >= interval.right) {
      if (armed) ++count;
      armed = false;
    }
  }
  return count;
}

StoppingTimeLadder::StoppingTimeLadder(double h1, double h2, std::int64_t horizon,
                                       std::vector<std::int64_t> finite_times, std::uint64_t source)
    : h1_(h1), h2_(h2), horizon_(horizon), times_(std::move(finite_times)), source_(source) {}

std::int64_t StoppingTimeLadder::time(std::size_t n) const {
  if (n < 1) throw std::out_of_range("ladder index starts at 1");
  return n <= times_.size() ? times_[n - 1] : kNever;
}

std::int64_t StoppingTimeLadder::truncated(std::size_t n) const { return std::min(time(n), horizon_); }

nlohmann::json StoppingTimeLadder::to_json() const {
  return {{"h1", h1_}, {"h2", number_or_null(h2_)}, {"T", horizon_}, {"times", times_}};
}

StoppingTimeLadder build_ladder(std::span<const double> gaps, double h1, double h2, std::int64_t T) {
  if (!(h1 < h2)) throw std::invalid_argument("ladder needs h1 < h2");
  if (T < 0 || static_cast<std::size_t>(T) > gaps.size()) throw std::invalid_argument("ladder horizon exceeds data");
  auto x = [&](std::int64_t t) { return gaps[static_cast<std::size_t>(t - 1)]; };
  auto first = [&](std::int64_t from, auto pred) -> std::int64_t {
    for (std::int64_t t = from; t <= T; ++t)
      if (pred(x(t))) return t;
    return kNever;
  };
  std::vector<std::int64_t> times;
  std::int64_t start = 1;
  while (true) {
    const auto up = first(start, [&](double v) { return v >= h1; });
    if (up == kNever) break;
    times.push_back(up);
    const auto exit = first(up, [&](double v) { return v >= h2 || v < h1; });
    if (exit == kNever) break;
    times.push_back(exit);
    const auto down = first(exit, [&](double v) { return v < h1; });
    if (down == kNever) break;
    times.push_back(down);
    start = down;
  }
  return StoppingTimeLadder(h1, h2, T, std::move(times));
}

StoppingTimeLadder build_ladder(const Trajectory& traj, double f_star, double h1, double h2, std::int64_t T) {
  const auto gaps = gaps_of(traj, f_star, false);
  auto ladder = build_ladder(gaps, h1, h2, T);
  return StoppingTimeLadder(h1, h2, T, ladder.finite_times(), traj.fingerprint);
}

std::int64_t upcrossing_bound(std::span<const double> gaps, const StoppingTimeLadder& ladder) {
  std::int64_t bound = 1;
  for (std::size_t k = 2; k <= ladder.excursion_count(); ++k) {
    const auto t = ladder.truncated(3 * k - 1);
    if (t >= 1 && gaps[static_cast<std::size_t>(t - 1)] >= ladder.h2()) ++bound;
  }
  return bound;
}

std::optional<std::int64_t> hitting_time(std::span<const double> grad_norms, std::int64_t t0, double upsilon) {
  if (t0 < 1) throw std::invalid_argument("hitting_time needs t0 >= 1");
  for (auto t = t0; t <= static_cast<std::int64_t>(grad_norms.size()); ++t)
    if (grad_norms[static_cast<std::size_t>(t - 1)] <= upsilon) return t;
  return std::nullopt;
}

std::optional<std::int64_t> hitting_time(const Trajectory& traj, std::int64_t t0, double upsilon) {
  const auto norms = grad_norms_of(traj);
  return hitting_time(norms, t0, upsilon);
}

double grad_quadratic_variation(std::span<const double> eps, std::span<const double> grad_norms,
                                const StoppingTimeLadder& ladder, int m) {
  if (m < 1) throw std::invalid_argument("m must be >= 1");
  if (static_cast<std::size_t>(ladder.horizon()) > std::min(eps.size(), grad_norms.size()))
    throw std::invalid_argument("ladder horizon exceeds the records");
  double total = 0.0;
  for (std::size_t k = 1; k <= ladder.excursion_count(); ++k) {
    const auto from = ladder.truncated(3 * k - 2);
    const auto to = ladder.truncated(3 * k - 1) - 1;
    for (auto t = from; t <= to; ++t) {
      const auto i = static_cast<std::size_t>(t - 1);
      total += std::pow(eps[i], m) * grad_norms[i] * grad_norms[i];
    }
  }
  return total;
}

double grad_quadratic_variation(const Trajectory& traj, const StoppingTimeLadder& ladder, int m) {
  if (ladder.source_fingerprint() != traj.fingerprint)
    throw std::invalid_argument("ladder was built from a different trajectory");
  const auto eps = eps_of(traj);
  const auto norms = grad_norms_of(traj);
  return grad_quadratic_variation(eps, norms, ladder, m);
}

nlohmann::json DescentResidualSummary::to_json() const {
  return {{"max_residual", number_or_null(max_residual)},
          {"max_scaled", number_or_null(max_scaled)},
          {"count_exceeding", count_exceeding},
          {"steps", steps}};
}

DescentResidualSummary descent_residuals(const Trajectory& traj, const Problem& problem, double tol_scale) {
  const double L = problem.certificate().lipschitz;
  DescentResidualSummary s;
  for (std::size_t i = 0; i < traj.records.size(); ++i) {
    const auto& r = traj.records[i];
    const double fn = next_f(traj, i);
    if (!std::isfinite(fn)) continue;
    const double rho =
        (fn - r.f) + r.eps * r.grad_norm * r.grad_norm - r.mart_inc - 0.5 * L * r.eps * r.eps * r.g_norm_sq;
    s.max_residual = std::max(s.max_residual, rho);
    s.max_scaled = std::max(s.max_scaled, rho / (1.0 + std::abs(r.f)));
    if (rho > tol_scale * (1.0 + std::abs(r.f))) ++s.count_exceeding;
    ++s.steps;
  }
  return s;
}

double truncated_increment_sum(std::span<const double> gaps, double d_eta, double nu) {
  if (!(nu > 0.0)) throw std::invalid_argument("nu must be positive");
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < gaps.size(); ++t) {
    if (!(gaps[t] < d_eta) || !std::isfinite(gaps[t + 1])) continue;
    total += std::max(0.0, std::abs(gaps[t + 1] - gaps[t]) - nu);
  }
  return total;
}

double truncated_increment_sum(const Trajectory& traj, const Problem& problem, double nu) {
  const auto& c = problem.certificate();
  const auto gaps = gaps_of(traj, c.f_star, true);
  return truncated_increment_sum(gaps, c.d_eta, nu);
}

nlohmann::json CNuConstants::to_json() const {
  return {{"C_bar", c_bar},
          {"power_sum", power_sum},
          {"power_sum_partial", power_sum_partial},
          {"tail_bound", tail_bound},
          {"C_nu", c_nu},
          {"note", note}};
}

double compute_C_nu_bar(double nu, double d_eta, double lipschitz, double p) {
  if (!(nu > 0.0) || !(p > 2.0)) throw std::invalid_argument("C_nu needs nu > 0 and p > 2");
  const double k = (1.0 + d_eta / nu) * lipschitz;
  return k * (2.0 / p) * std::pow(4.0 * k * (1.0 - 2.0 / p) / nu, (p - 2.0) / 2.0);
}

CNuConstants compute_C_nu(double nu, double d_eta, double lipschitz, double p, double m0,
                          const StepSizeSchedule& schedule, std::int64_t n_partial) {
  if (schedule.is_table()) throw std::domain_error("C_nu needs an analytic schedule; table schedules are rejected");
  const auto cls = schedule.classify();
  if (cls.relaxed != Verdict::yes)
    throw std::domain_error("C_nu is infinite: schedule is not relaxed (" + cls.governing_test + ")");
  CNuConstants c;
  c.c_bar = compute_C_nu_bar(nu, d_eta, lipschitz, p);
  c.power_sum_partial = schedule.partial_sum(p, n_partial);
  c.tail_bound = schedule.tail_bound(p, n_partial);
  c.power_sum = c.power_sum_partial + c.tail_bound;
  c.c_nu = c.c_bar * std::pow(m0, p) * c.power_sum;
  c.note = "M_p taken as M0^p";
  return c;
}

C1C2 compute_C1_C2(double a, double b, int m, double lipschitz, double G, double delta_ab, double eps1,
                   double c_half_gap) {
  if (!(a > 0.0) || !(a < b)) throw std::invalid_argument("C1/C2 need 0 < a < b");
  if (!(delta_ab > 0.0)) throw std::invalid_argument("delta_ab must be positive");
  if (m < 1) throw std::invalid_argument("m must be >= 1");
  const double L = lipschitz, w = b - a, d2 = delta_ab * delta_ab;
  C1C2 out;
  out.c1 = ((3.0 * b * L / w + L / 2.0) * (2.0 * G / d2) + 12.0 * L * b * b * G / (w * w)) * (1.0 + 1.0 / d2);
  const double half = std::pow(eps1, (m - 1) / 2.0);
  out.c2 = (6.0 * a * b / w) * half * (half + std::pow(eps1, m - 1)) * c_half_gap;
  return out;
}

C1C2 compute_C1_C2(double a, double b, int m, double lipschitz, double G, double delta_ab,
                   const StepSizeSchedule& schedule, double c_half_gap) {
  return compute_C1_C2(a, b, m, lipschitz, G, delta_ab, schedule.step_size(1), c_half_gap);
}

RecursiveParts recursive_parts(std::span<const double> gaps, std::span<const double> eps,
                               std::span<const double> grad_norms, const RecursiveSpec& spec) {
  if (!(spec.a < spec.b) || !(spec.b < spec.c)) throw std::invalid_argument("recursive check needs a < b < c");
  const auto T = static_cast<std::int64_t>(gaps.size());
  RecursiveParts parts;
  const auto upper = build_ladder(gaps, spec.b, spec.c, T);
  const auto lower = build_ladder(gaps, spec.a, spec.b, T);
  auto nonempty = [](const StoppingTimeLadder& l) {
    for (std::size_t k = 1; k <= l.excursion_count(); ++k)
      if (l.truncated(3 * k - 2) < l.truncated(3 * k - 1)) return true;
    return false;
  };
  parts.lhs = grad_quadratic_variation(eps, grad_norms, upper, spec.m);
  parts.rhs_variation = grad_quadratic_variation(eps, grad_norms, lower, spec.m + 1);
  parts.lhs_has_excursion = nonempty(upper);
  parts.rhs_has_excursion = nonempty(lower);
  for (std::size_t i = 0; i < gaps.size(); ++i)
    if (gaps[i] >= spec.a && gaps[i] < spec.c) parts.min_grad_in_band = std::min(parts.min_grad_in_band, grad_norms[i]);
  return parts;
}

RecursiveParts recursive_parts(const Trajectory& traj, double f_star, const RecursiveSpec& spec) {
  const auto gaps = gaps_of(traj, f_star, false);
  const auto eps = eps_of(traj);
  const auto norms = grad_norms_of(traj);
  return recursive_parts(gaps, eps, norms, spec);
}

std::string to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::fail: return "fail";
    case CheckStatus::inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

nlohmann::json RecursiveResult::to_json() const {
  return {{"lhs", lhs},       {"lhs_se", lhs_se}, {"rhs", number_or_null(rhs)}, {"rhs_se", number_or_null(rhs_se)},
          {"C1", c1},         {"C2", number_or_null(c2)}, {"delta_ab", number_or_null(delta_ab)},
          {"n", n},           {"status", to_string(status)}, {"note", note}};
}

RecursiveResult evaluate_recursive_inequality(std::span<const RecursiveParts> parts, const RecursiveSpec& spec,
                                              const Problem& problem, const GradientOracle& oracle,
                                              const StepSizeSchedule& schedule, const RecursiveOptions& options) {
  RecursiveResult res;
  res.n = static_cast<std::int64_t>(parts.size());
  if (parts.empty()) {
    res.note = "no trajectories";
    return res;
  }
  std::vector<double> lhs, rhs;
  bool any_excursion = false;
  double delta = kInf;
  for (const auto& p : parts) {
    lhs.push_back(p.lhs);
    rhs.push_back(p.rhs_variation);
    any_excursion = any_excursion || p.lhs_has_excursion || p.rhs_has_excursion;
    delta = std::min(delta, p.min_grad_in_band);
  }
  std::tie(res.lhs, res.lhs_se) = mean_se(lhs);
  if (!any_excursion) {
    res.note = "excursion sets empty on every trajectory";
    return res;
  }
  res.delta_ab = options.delta_ab.value_or(delta);
  if (!(res.delta_ab > 0.0) || !std::isfinite(res.delta_ab)) {
    res.note = "delta_ab estimate is not a positive finite number";
    return res;
  }
  const auto& cert = problem.certificate();
  const auto& dm = oracle.declared();
  double c_half_gap;
  if (options.c_half_gap) {
    c_half_gap = *options.c_half_gap;
  } else {
    try {
      c_half_gap = compute_C_nu((spec.b - spec.a) / 2.0, cert.d_eta, cert.lipschitz, dm.p, dm.M0, schedule,
                                options.n_partial)
                       .c_nu;
    } catch (const std::domain_error& e) {
      res.note = e.what();
      return res;
    }
  }
  const auto c = compute_C1_C2(spec.a, spec.b, spec.m, cert.lipschitz, dm.G, res.delta_ab, schedule, c_half_gap);
  res.c1 = c.c1 * options.c1_scale;
  res.c2 = c.c2;
  const auto [x_mean, x_se] = mean_se(rhs);
  res.rhs = res.c1 * x_mean + res.c2;
  res.rhs_se = res.c1 * x_se;
  const double slack = 2.0 * std::sqrt(res.lhs_se * res.lhs_se + res.rhs_se * res.rhs_se);
  res.status = res.lhs <= res.rhs + slack ? CheckStatus::pass : CheckStatus::fail;
  return res;
}

RecursiveResult check_recursive_inequality(std::span<const Trajectory> trajectories, const RecursiveSpec& spec,
                                           const Problem& problem, const GradientOracle& oracle,
                                           const StepSizeSchedule& schedule, const RecursiveOptions& options) {
  std::vector<RecursiveParts> parts;
  for (const auto& t : trajectories)
    if (!t.diverged) parts.push_back(recursive_parts(t, problem.certificate().f_star, spec));
  return evaluate_recursive_inequality(parts, spec, problem, oracle, schedule, options);
}

std::vector<bool> s_delta_flags(const Trajectory& traj, const Problem& problem, double delta) {
  const auto& crit = problem.critical_set();
  if (!crit.known()) throw std::invalid_argument("S_delta needs certified critical values");
  std::vector<bool> flags;
  flags.reserve(traj.records.size());
  for (const auto& r : traj.records) flags.push_back(crit.distance_to_value(r.f) < delta);
  return flags;
}

WindowSup martingale_window_sup(const Trajectory& traj, std::int64_t t, double t_window,
                                const std::vector<bool>& in_s_delta, double p) {
  const auto n = traj.length();
  if (static_cast<std::int64_t>(traj.noise.size()) != n)
    throw std::invalid_argument("noise vectors not retained; enable record_policy.noise_vectors for this diagnostic");
  if (static_cast<std::int64_t>(in_s_delta.size()) != n) throw std::invalid_argument("S_delta flags length mismatch");
  if (t < 1 || t > n) throw std::out_of_range("window start outside the record");
  if (!(t_window >= 0.0)) throw std::invalid_argument("window length must be >= 0");

  // Sigma(j) for j = 0..n, accumulated in record order.
  std::vector<double> sigma(static_cast<std::size_t>(n) + 1, 0.0);
  for (std::int64_t j = 1; j <= n; ++j)
    sigma[static_cast<std::size_t>(j)] = sigma[static_cast<std::size_t>(j - 1)] + traj.records[static_cast<std::size_t>(j - 1)].eps;
  const double target = sigma[static_cast<std::size_t>(t)] + t_window;
  const auto it = std::upper_bound(sigma.begin(), sigma.end(), target);
  WindowSup out;
  out.window_end = static_cast<std::int64_t>(it - sigma.begin()) - 1;
  if (it == sigma.end()) out.clipped = true;

  Vector acc = Vector::Zero(traj.noise.front().size());
  const double power = 2.0 * p - 2.0;
  for (auto k = t; k <= out.window_end; ++k) {
    const auto i = static_cast<std::size_t>(k - 1);
    if (in_s_delta[i]) acc += traj.noise[i];
    out.value = std::max(out.value, std::pow(acc.norm(), power));
  }
  return out;
}

nlohmann::json LossBoundSummary::to_json() const {
  return {{"max_violation", number_or_null(max_violation)},
          {"max_relative", number_or_null(max_relative)},
          {"pass", pass}};
}

LossBoundSummary loss_bound_check(const Problem& problem, const std::vector<Vector>& points) {
  const auto& c = problem.certificate();
  LossBoundSummary s;
  for (const auto& x : points) {
    const double bound = 2.0 * c.lipschitz * (problem.value(x) - c.f_star);
    const double v = problem.gradient(x).squaredNorm() - bound;
    const double scale = std::max(1.0, bound);
    s.max_violation = std::max(s.max_violation, v);
    s.max_relative = std::max(s.max_relative, v / scale);
    if (v > 1e-9 * scale) s.pass = false;
  }
  return s;
}

nlohmann::json IndicatorDescentSummary::to_json() const {
  return {{"residual_sum", residual_sum}, {"max_pointwise", number_or_null(max_pointwise)},
          {"active_steps", active_steps}};
}

IndicatorDescentSummary indicator_descent_check(const Trajectory& traj, const Problem& problem, double G, double y,
                                                int m) {
  if (!(y > 0.0)) throw std::invalid_argument("y must be positive");
  if (m < 1) throw std::invalid_argument("m must be >= 1");
  const double L = problem.certificate().lipschitz;
  IndicatorDescentSummary s;
  for (std::size_t i = 0; i < traj.records.size(); ++i) {
    const auto& r = traj.records[i];
    const double g2 = r.grad_norm * r.grad_norm;
    if (!(g2 >= y)) continue;
    const double fn = next_f(traj, i);
    if (!std::isfinite(fn)) continue;
    const double em1 = std::pow(r.eps, m - 1), em = em1 * r.eps, ep1 = em * r.eps;
    const double lhs = em * g2;
    const double common = em1 * (r.f - fn) + em1 * r.mart_inc;
    s.residual_sum += lhs - (common + 0.5 * L * G * (1.0 + 1.0 / y) * ep1 * g2);
    s.max_pointwise = std::max(s.max_pointwise, lhs - (common + 0.5 * L * ep1 * r.g_norm_sq));
    ++s.active_steps;
  }
  return s;
}

nlohmann::json DiagnosticEntry::to_json() const {
  nlohmann::json j{{"check_name", check_name},
                   {"params", params},
                   {"value", value},
                   {"tolerance", tolerance},
                   {"pass", pass ? nlohmann::json(*pass) : nlohmann::json()}};
  if (stderr_halfwidth) j["stderr_halfwidth"] = *stderr_halfwidth;
  return j;
}

bool DiagnosticsReport::all_pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return !e.pass || *e.pass; });
}

nlohmann::json DiagnosticsReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) arr.push_back(e.to_json());
  return arr;
}

}  // namespace sgdstop
