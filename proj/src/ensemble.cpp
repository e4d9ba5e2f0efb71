#include "sgdstop/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "sgdstop/json_util.hpp"

namespace sgdstop {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double median_of(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

bool usable(const TrajectorySummary& s) { return !s.failed && !s.diverged; }

}  // namespace

Vector Theta1Policy::initial(int d, std::uint64_t seed) const {
  switch (kind) {
    case Kind::origin: return Vector::Zero(d);
    case Kind::fixed:
      if (value.size() != d) throw std::invalid_argument("fixed theta_1 has the wrong dimension");
      return value;
    case Kind::ball: {
      RandomStream rng(seed, 0x7E7A);
      return PointSampler::ball(d, radius).draw(rng);
    }
  }
  throw std::logic_error("unknown theta_1 policy");
}

nlohmann::json Theta1Policy::to_json() const {
  switch (kind) {
    case Kind::origin: return {{"policy", "origin"}};
    case Kind::fixed: return {{"policy", "fixed"}, {"value", std::vector<double>(value.data(), value.data() + value.size())}};
    case Kind::ball: return {{"policy", "ball"}, {"radius", radius}};
  }
  return {};
}

Theta1Policy Theta1Policy::from_json(const nlohmann::json& j, int d, const std::string& path) {
  StrictObject obj(j, path);
  Theta1Policy p;
  const auto kind = obj.required<std::string>("policy");
  if (kind == "origin") {
    p.kind = Kind::origin;
  } else if (kind == "fixed") {
    p.kind = Kind::fixed;
    const auto v = obj.required<std::vector<double>>("value");
    if (static_cast<int>(v.size()) != d)
      throw ConfigError(obj.field_path("value"), "length must equal the problem dimension " + std::to_string(d));
    p.value = Eigen::Map<const Vector>(v.data(), d);
  } else if (kind == "ball") {
    p.kind = Kind::ball;
    p.radius = obj.required<double>("radius");
    if (!(p.radius > 0.0)) throw ConfigError(obj.field_path("radius"), "must be positive");
  } else {
    throw ConfigError(obj.field_path("policy"), "expected origin, fixed or ball");
  }
  obj.finish();
  return p;
}

std::vector<std::int64_t> geometric_checkpoints(std::int64_t T, int count) {
  if (T < 1 || count < 1) throw std::invalid_argument("checkpoints need T >= 1 and count >= 1");
  std::vector<std::int64_t> out;
  std::int64_t div = 1;
  for (int j = 0; j < count && j < 62; ++j, div *= 2) out.push_back((T + div - 1) / div);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

TrajectorySummary summarize(const Trajectory& traj, const EnsembleSetup& setup, const EnsemblePlan& plan,
                            const std::vector<std::int64_t>& checkpoints) {
  const auto& problem = *setup.problem;
  const double f_star = problem.certificate().f_star;
  TrajectorySummary s;
  s.seed = traj.seed;
  s.diverged = traj.diverged;
  s.last_finite_step = traj.last_finite_step;
  s.final_f = traj.final_f;
  const auto n = traj.length();
  const auto& rec = traj.records;

  for (auto t : checkpoints) {
    if (t > n) {
      s.grad_sq.push_back(kNaN);
      s.f_gap.push_back(kNaN);
      s.mart_inc.push_back(kNaN);
      s.tail_sup_grad.push_back(kNaN);
      continue;
    }
    const auto& r = rec[static_cast<std::size_t>(t - 1)];
    s.grad_sq.push_back(r.grad_norm * r.grad_norm);
    s.f_gap.push_back(r.f - f_star);
    s.mart_inc.push_back(r.mart_inc);
    double sup = 0.0;
    for (auto k = (t + 1) / 2; k <= t; ++k) sup = std::max(sup, rec[static_cast<std::size_t>(k - 1)].grad_norm);
    s.tail_sup_grad.push_back(sup);
  }
  const auto half = (setup.T + 1) / 2;
  for (std::int64_t k = 0; k < n; ++k) {
    const double g2 = rec[static_cast<std::size_t>(k)].grad_norm * rec[static_cast<std::size_t>(k)].grad_norm;
    s.sup_grad_sq = std::max(s.sup_grad_sq, g2);
    if (k < half) s.sup_grad_sq_half = s.sup_grad_sq;
  }

  std::vector<double> gaps;
  gaps.reserve(rec.size());
  for (const auto& r : rec) gaps.push_back(r.f - f_star);
  for (const auto& iv : plan.upcross_intervals) {
    UpcrossCounts c;
    c.full = count_upcrossings(gaps, iv);
    c.half = count_upcrossings(std::span<const double>(gaps).first(static_cast<std::size_t>(std::min(half, n))), iv);
    c.bound = upcrossing_bound(gaps, build_ladder(gaps, iv.left, iv.right, n));
    s.upcross.push_back(c);
  }
  for (double nu : plan.nus) s.truncated_sums.push_back(truncated_increment_sum(traj, problem, nu));
  s.descent = descent_residuals(traj, problem);
  for (const auto& spec : plan.recursive) s.recursive.push_back(recursive_parts(traj, f_star, spec));
  for (const auto& spec : plan.indicator)
    s.indicator.push_back(indicator_descent_check(traj, problem, setup.oracle.declared().G, spec.y, spec.m));
  if (plan.theta_window && n > 0) {
    const auto flags = s_delta_flags(traj, problem, plan.theta_window->delta);
    for (auto t : plan.theta_window->times) {
      if (t > n) {
        s.theta.push_back({kNaN, 0, true});
        continue;
      }
      s.theta.push_back(martingale_window_sup(traj, t, plan.theta_window->window, flags, setup.oracle.declared().p));
    }
  }
  return s;
}

nlohmann::json MeanSe::to_json() const { return {{"mean", num(mean)}, {"stderr", num(se)}, {"n", n}}; }

MeanSe mean_and_stderr(const std::vector<double>& xs) {
  MeanSe m;
  m.n = static_cast<std::int64_t>(xs.size());
  if (xs.empty()) {
    m.mean = m.se = kNaN;
    return m;
  }
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.se = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  }
  return m;
}

EnsembleStats aggregate(std::vector<TrajectorySummary> summaries, const std::vector<std::int64_t>& checkpoints,
                        const EnsemblePlan& plan) {
  std::sort(summaries.begin(), summaries.end(), [](const auto& a, const auto& b) { return a.seed < b.seed; });
  EnsembleStats st;
  st.n_trajectories = static_cast<std::int64_t>(summaries.size());
  st.as_tolerance = plan.as_tolerance;
  std::vector<const TrajectorySummary*> used;
  for (const auto& s : summaries) {
    if (s.failed)
      ++st.failed_count;
    else if (s.diverged)
      ++st.diverged_count;
    else
      used.push_back(&s);
  }
  st.n_used = static_cast<std::int64_t>(used.size());
  const double nu = static_cast<double>(used.size());

  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    std::vector<double> g2, gap, mart;
    double as_hits = 0.0;
    for (const auto* s : used) {
      g2.push_back(s->grad_sq[c]);
      gap.push_back(s->f_gap[c]);
      mart.push_back(s->mart_inc[c]);
      if (s->tail_sup_grad[c] < plan.as_tolerance) as_hits += 1.0;
    }
    const auto g = mean_and_stderr(g2);
    const auto m = mean_and_stderr(mart);
    st.checkpoints.push_back(
        {checkpoints[c], g.mean, g.se, median_of(gap), used.empty() ? kNaN : as_hits / nu, m.mean, m.se});
  }
  st.as_converged_fraction = st.checkpoints.empty() ? kNaN : st.checkpoints.back().as_fraction;

  std::vector<double> sup, sup_half;
  for (const auto* s : used) {
    sup.push_back(s->sup_grad_sq);
    sup_half.push_back(s->sup_grad_sq_half);
  }
  st.sup_grad_sq = mean_and_stderr(sup);
  st.sup_grad_sq_half = mean_and_stderr(sup_half);

  st.grad_sq_slope = kNaN;
  if (st.checkpoints.size() >= 2) {
    const auto k = std::min<std::size_t>(3, st.checkpoints.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (auto i = st.checkpoints.size() - k; i < st.checkpoints.size(); ++i) {
      const double x = std::log(static_cast<double>(st.checkpoints[i].t));
      const double y = std::log(st.checkpoints[i].mean_grad_sq);
      sx += x, sy += y, sxx += x * x, sxy += x * y;
    }
    const double kk = static_cast<double>(k);
    st.grad_sq_slope = (kk * sxy - sx * sy) / (kk * sxx - sx * sx);
  }

  for (std::size_t i = 0; i < plan.upcross_intervals.size(); ++i) {
    double sat = 0, mh = 0, mf = 0;
    std::int64_t viol = 0;
    for (const auto* s : used) {
      const auto& c = s->upcross[i];
      if (c.full == c.half) sat += 1;
      mh += static_cast<double>(c.half);
      mf += static_cast<double>(c.full);
      if (c.full > c.bound) ++viol;
    }
    const double d = used.empty() ? kNaN : nu;
    st.upcross.push_back({plan.upcross_intervals[i], sat / d, mh / d, mf / d, viol});
  }

  st.nus = plan.nus;
  for (std::size_t i = 0; i < plan.nus.size(); ++i) {
    std::vector<double> v;
    for (const auto* s : used) v.push_back(s->truncated_sums[i]);
    st.truncated_sums.push_back(mean_and_stderr(v));
  }
  for (const auto* s : used) {
    st.descent_max_scaled = std::max(st.descent_max_scaled, s->descent.max_scaled);
    st.descent_exceeding += s->descent.count_exceeding;
  }
  for (std::size_t i = 0; i < plan.indicator.size(); ++i) {
    std::vector<double> v;
    for (const auto* s : used) v.push_back(s->indicator[i].residual_sum);
    st.indicator_residual.push_back(mean_and_stderr(v));
  }
  if (plan.theta_window) {
    st.theta_times = plan.theta_window->times;
    for (std::size_t i = 0; i < st.theta_times.size(); ++i) {
      std::vector<double> v;
      for (const auto* s : used) {
        v.push_back(s->theta[i].value);
        if (s->theta[i].clipped) ++st.theta_clipped;
      }
      st.theta_median.push_back(median_of(v));
    }
  }
  return st;
}

nlohmann::json EnsembleStats::to_json() const {
  nlohmann::json cps = nlohmann::json::array();
  for (const auto& c : checkpoints)
    cps.push_back({{"t", c.t},
                   {"mean_grad_sq", num(c.mean_grad_sq)},
                   {"stderr", num(c.stderr_grad_sq)},
                   {"median_f_gap", num(c.median_f_gap)},
                   {"as_fraction", num(c.as_fraction)},
                   {"mart_inc_mean", num(c.mart_mean)},
                   {"mart_inc_stderr", num(c.mart_se)}});
  nlohmann::json up = nlohmann::json::array();
  for (const auto& u : upcross)
    up.push_back({{"interval", {u.interval.left, num(u.interval.right)}},
                  {"saturated_fraction", num(u.saturated_fraction)},
                  {"mean_count_half", num(u.mean_half)},
                  {"mean_count_full", num(u.mean_full)},
                  {"bound_violations", u.bound_violations}});
  nlohmann::json trunc = nlohmann::json::array();
  for (std::size_t i = 0; i < nus.size(); ++i) trunc.push_back({{"nu", nus[i]}, {"sum", truncated_sums[i].to_json()}});
  nlohmann::json ind = nlohmann::json::array();
  for (const auto& m : indicator_residual) ind.push_back(m.to_json());
  nlohmann::json theta = nlohmann::json::array();
  for (std::size_t i = 0; i < theta_times.size(); ++i)
    theta.push_back({{"t", theta_times[i]}, {"median", num(theta_median[i])}});
  return {{"n_trajectories", n_trajectories},
          {"failed_count", failed_count},
          {"diverged_count", diverged_count},
          {"n_used", n_used},
          {"checkpoints", cps},
          {"as_converged_fraction", num(as_converged_fraction)},
          {"as_proxy", {{"label", "empirical a.s. proxy"}, {"tolerance", as_tolerance}}},
          {"sup_grad_sq_mean", sup_grad_sq.to_json()},
          {"sup_grad_sq_half_mean", sup_grad_sq_half.to_json()},
          {"grad_sq_slope_last3", num(grad_sq_slope)},
          {"upcross_saturation", up},
          {"truncated_increment_sums", trunc},
          {"descent_max_scaled_residual", num(descent_max_scaled)},
          {"descent_exceeding", descent_exceeding},
          {"indicator_descent_residual", ind},
          {"theta_window_median", theta},
          {"theta_window_clipped", theta_clipped}};
}

void EnsembleStats::write_checkpoints_csv(std::ostream& out) const {
  out << "t,mean_grad_sq,stderr,median_f_gap,as_fraction\n";
  for (const auto& c : checkpoints)
    out << c.t << ',' << format_double(c.mean_grad_sq) << ',' << format_double(c.stderr_grad_sq) << ','
        << format_double(c.median_f_gap) << ',' << format_double(c.as_fraction) << '\n';
}

nlohmann::json CriticalMatch::to_json() const {
  nlohmann::json m = nlohmann::json::array();
  for (const auto& v : matched) m.push_back(v ? nlohmann::json(*v) : nlohmann::json());
  return {{"status", to_string(status)}, {"fraction", num(fraction)}, {"n_used", n_used},
          {"n_excluded", n_excluded},    {"matched", m}};
}

CriticalMatch critical_value_match(const std::vector<TrajectorySummary>& summaries, const Problem& problem,
                                   double tolerance) {
  CriticalMatch cm;
  const auto& crit = problem.critical_set();
  std::vector<const TrajectorySummary*> sorted;
  for (const auto& s : summaries) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->seed < b->seed; });
  double hits = 0.0;
  for (const auto* s : sorted) {
    if (!usable(*s)) {
      ++cm.n_excluded;
      continue;
    }
    ++cm.n_used;
    std::optional<double> match;
    if (crit.known()) {
      const auto it = std::min_element(crit.values.begin(), crit.values.end(), [&](double a, double b) {
        return std::abs(a - s->final_f) < std::abs(b - s->final_f);
      });
      if (std::abs(*it - s->final_f) <= tolerance) match = *it;
    }
    if (match) hits += 1.0;
    cm.matched.push_back(match);
  }
  if (!crit.known() || cm.n_used == 0) {
    cm.fraction = kNaN;
    cm.status = CheckStatus::inconclusive;
    return cm;
  }
  cm.fraction = hits / static_cast<double>(cm.n_used);
  cm.status = CheckStatus::pass;
  return cm;
}

nlohmann::json EnsembleResult::to_json() const {
  nlohmann::json rec = nlohmann::json::array();
  for (const auto& r : recursive) rec.push_back(r.to_json());
  nlohmann::json cnu = nlohmann::json::array();
  for (std::size_t i = 0; i < c_nu.size(); ++i)
    cnu.push_back(c_nu[i] ? c_nu[i]->to_json() : nlohmann::json({{"C_nu", nullptr}, {"note", "infinite"}}));
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : summaries) {
    nlohmann::json p{{"seed", s.seed}, {"diverged", s.diverged}, {"failed", s.failed},
                     {"last_finite_step", s.last_finite_step}, {"final_f", num(s.final_f)}};
    if (s.failed) p["error"] = s.error;
    per.push_back(p);
  }
  return {{"stats", stats.to_json()},
          {"classification",
           {{"robbins_monro", to_string(classification.robbins_monro)},
            {"relaxed", to_string(classification.relaxed)},
            {"governing_test", classification.governing_test}}},
          {"guarantee", guarantee},
          {"recursive_inequality", rec},
          {"C_nu", cnu},
          {"trajectories", per}};
}

EnsembleResult run_ensemble(const EnsembleSetup& setup, const EnsemblePlan& plan,
                            const TrajectoryCallback& on_trajectory) {
  if (plan.n < 2) throw std::invalid_argument("an ensemble needs n >= 2");
  if (!setup.problem) throw std::invalid_argument("ensemble setup has no problem");
  EnsembleResult result;
  result.checkpoints = geometric_checkpoints(setup.T, plan.n_checkpoints);
  result.classification = setup.schedule.classify();
  result.guarantee = result.classification.relaxed == Verdict::yes ? "relaxed conditions hold" : "no guarantee";

  RecordPolicy policy = setup.record;
  if (plan.theta_window) policy.keep_noise = true;

  const auto n = static_cast<std::size_t>(plan.n);
  std::vector<TrajectorySummary> summaries(n);
  std::vector<Trajectory> kept(plan.keep_trajectories ? n : 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const std::uint64_t seed = plan.base_seed + i;
      try {
        const Vector theta1 = setup.theta1.initial(setup.problem->dimension(), seed);
        Trajectory traj = run(*setup.problem, setup.oracle, setup.schedule, theta1, setup.T, seed, policy);
        summaries[i] = summarize(traj, setup, plan, result.checkpoints);
        if (on_trajectory) on_trajectory(traj);
        if (plan.keep_trajectories) kept[i] = std::move(traj);
      } catch (const std::exception& e) {
        summaries[i] = TrajectorySummary{};
        summaries[i].seed = seed;
        summaries[i].failed = true;
        summaries[i].error = e.what();
      }
    }
  };
  unsigned threads = plan.threads ? plan.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  for (unsigned k = 1; k < threads; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  result.stats = aggregate(summaries, result.checkpoints, plan);

  const auto& cert = setup.problem->certificate();
  const auto& dm = setup.oracle.declared();
  for (std::size_t r = 0; r < plan.recursive.size(); ++r) {
    std::vector<RecursiveParts> parts;
    for (const auto& s : summaries)
      if (usable(s)) parts.push_back(s.recursive[r]);
    result.recursive.push_back(
        evaluate_recursive_inequality(parts, plan.recursive[r], *setup.problem, setup.oracle, setup.schedule));
  }
  for (double nu : plan.nus) {
    std::optional<CNuConstants> c;
    try {
      c = compute_C_nu(nu, cert.d_eta, cert.lipschitz, dm.p, dm.M0, setup.schedule);
    } catch (const std::domain_error&) {
    }
    result.c_nu.push_back(std::move(c));
  }
  result.summaries = std::move(summaries);
  result.trajectories = std::move(kept);
  return result;
}

double CounterexampleLaw::sample(RandomStream& rng) const { return rng.uniform() < p_zero ? 0.0 : atom; }

CounterexampleLaw counterexample_distribution(std::int64_t n) {
  if (n < 1) throw std::invalid_argument("counterexample needs n >= 1");
  const auto x = static_cast<double>(n);
  const double atom = x;
  // atom^2 / n^2 evaluated as (atom / n)^2
  return {n, 1.0 - 1.0 / (x * x), atom, (atom / x) * (atom / x)};
}

nlohmann::json TailEventEstimate::to_json() const {
  return {{"k", k},       {"horizon", horizon},   {"paths", paths},           {"fraction", fraction},
          {"stderr", stderr_}, {"tail_sum", tail_sum}, {"exact", exact},
          {"within_3se", within_3se}, {"union_bound_holds", union_bound_holds}};
}

TailEventEstimate counterexample_tail_event(std::int64_t k, std::int64_t horizon, std::int64_t paths,
                                            std::uint64_t seed) {
  if (k < 1 || horizon <= k || paths < 2) throw std::invalid_argument("tail event needs 1 <= k < horizon, paths >= 2");
  std::vector<CounterexampleLaw> laws;
  for (auto n = k + 1; n <= horizon; ++n) laws.push_back(counterexample_distribution(n));
  RandomStream rng(seed, 0xC0DE);
  std::int64_t hits = 0;
  for (std::int64_t p = 0; p < paths; ++p) {
    bool any = false;
    for (const auto& law : laws) any = (law.sample(rng) != 0.0) || any;
    if (any) ++hits;
  }
  TailEventEstimate est{};
  est.k = k;
  est.horizon = horizon;
  est.paths = paths;
  est.fraction = static_cast<double>(hits) / static_cast<double>(paths);
  est.stderr_ = std::sqrt(est.fraction * (1.0 - est.fraction) / static_cast<double>(paths));
  for (auto n = horizon; n > k; --n) est.tail_sum += 1.0 / (static_cast<double>(n) * static_cast<double>(n));
  est.exact = 1.0 - static_cast<double>(k) * static_cast<double>(horizon + 1) /
                        (static_cast<double>(k + 1) * static_cast<double>(horizon));
  est.within_3se = std::abs(est.fraction - est.tail_sum) <= 3.0 * est.stderr_;
  est.union_bound_holds = est.fraction <= est.tail_sum + 3.0 * est.stderr_;
  return est;
}

}  // namespace sgdstop
