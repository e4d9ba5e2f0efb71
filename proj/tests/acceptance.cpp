// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sgdstop/experiment.hpp"

using namespace sgdstop;
namespace fs = std::filesystem;

namespace {

struct Line {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Line> lines;

void report(int id, bool pass, const std::string& detail) {
  lines.push_back({id, pass, detail});
  std::printf("[%s] %2d %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Independent maximum of disjoint up-crossings by dynamic programming.
std::int64_t exhaustive_upcrossings(const std::vector<double>& x, double e, double o) {
  const std::size_t n = x.size();
  std::vector<std::int64_t> best(n + 2, 0);
  for (std::size_t s = n; s-- > 0;) {
    best[s] = best[s + 1];
    if (!(x[s] < e)) continue;
    for (std::size_t j = s + 1; j < n; ++j) {
      if (x[j] >= o) {
        best[s] = std::max(best[s], 1 + best[j + 1]);
        break;
      }
      if (x[j] < e) break;
    }
  }
  return best[0];
}

void step_size_table() {
  const auto t0 = std::chrono::steady_clock::now();
  struct Row {
    double q;
    Verdict rm, relaxed;
  };
  const Row rows[] = {{0.2, Verdict::no, Verdict::no},    {0.3, Verdict::no, Verdict::no},
                      {0.4, Verdict::no, Verdict::yes},   {0.45, Verdict::no, Verdict::yes},
                      {0.5, Verdict::no, Verdict::yes},   {0.6, Verdict::yes, Verdict::yes},
                      {0.75, Verdict::yes, Verdict::yes}, {1.0, Verdict::yes, Verdict::yes}};
  int ok = 0;
  for (const auto& r : rows) {
    for (const auto& s : {StepSizeSchedule::power(r.q), StepSizeSchedule::log_power(r.q)}) {
      const auto c = s.classify();
      ok += c.robbins_monro == r.rm && c.relaxed == r.relaxed;
    }
  }
  const double secs = seconds_since(t0);
  report(1, ok == 16 && secs < 1.0, fmt("step-size table: %d/16 verdict pairs match, %.3f s", ok, secs));
}

void golden_ensemble(const fs::path& src, const fs::path& work) {
  const auto cfg = load_config(src / "configs" / "golden_cos_quadratic.json");
  const auto out = work / "golden";
  fs::remove_all(out);
  const auto t0 = std::chrono::steady_clock::now();
  const auto outcome = run_experiment(cfg, out, 0);
  const double secs = seconds_since(t0);
  const auto& res = outcome.result;
  const auto& st = res.stats;

  const auto& last = st.checkpoints.back();
  report(2, last.mean_grad_sq < 1e-2 && st.grad_sq_slope < 0.0 && secs < 300.0,
         fmt("decreasing E|grad f|^2: final mean %.3e (< 1e-2), last-three log-log slope %.3f (< 0), %.1f s",
             last.mean_grad_sq, st.grad_sq_slope, secs));

  const auto cm = critical_value_match(res.summaries, *cfg.setup.problem, 1e-2);
  report(3, st.as_converged_fraction >= 0.95 && cm.fraction >= 0.95,
         fmt("a.s. proxy fraction %.3f (>= 0.95), critical value match %.3f at tol 1e-2 (>= 0.95)",
             st.as_converged_fraction, cm.fraction));

  const UpcrossStats* up = nullptr;
  for (const auto& u : st.upcross)
    if (u.interval.left == 0.1 && std::abs(u.interval.right - 0.15) < 1e-12) up = &u;
  report(4, up && up->saturated_fraction >= 0.9,
         up ? fmt("up-crossings of (0.1, 0.15) saturated by T/2 on %.3f of trajectories (>= 0.9), bound violations %lld",
                  up->saturated_fraction, static_cast<long long>(up->bound_violations))
            : std::string("interval (0.1, 0.15) missing from the golden config"));

  // Descent residuals: golden trajectories, then the exact quadratic case.
  double quad_worst = 0.0;
  for (double L : {0.5, 1.0, 4.0}) {
    const auto p = make_isotropic_quadratic(5, L);
    const auto tr = run(*p, GradientOracle::additive_gaussian(0.0), StepSizeSchedule::constant(1.0 / L),
                        Vector::LinSpaced(5, -2.0, 3.0), 1000, 0);
    const auto r = descent_residuals(tr, *p);
    quad_worst = std::max(quad_worst, std::max(std::abs(r.max_residual), 0.0));
    const auto tr2 = run(*p, GradientOracle::additive_gaussian(0.0), StepSizeSchedule::power(0.5, 0.5 / L),
                         Vector::LinSpaced(5, -2.0, 3.0), 1000, 0);
    quad_worst = std::max(quad_worst, std::abs(descent_residuals(tr2, *p).max_residual));
  }
  report(5, st.descent_max_scaled <= 1e-9 && st.descent_exceeding == 0 && quad_worst <= 1e-12,
         fmt("descent residuals: golden max rho/(1+|f|) %.3e (<= 1e-9), %lld exceeding; isotropic quadratic "
             "max |rho| %.3e (<= 1e-12)",
             st.descent_max_scaled, static_cast<long long>(st.descent_exceeding), quad_worst));

  // Recursive inequality: golden ensemble plus the sensitivity control.
  const auto k = compute_C1_C2(1.0, 2.0, 1, 1.0, 1.0, 0.5, 1.0, 0.0);
  const RecursiveResult* rec = res.recursive.empty() ? nullptr : &res.recursive.front();
  const RecursiveSpec control_spec{1.0, 2.0, 4.0, 1};
  RecursiveOptions control;
  control.delta_ab = 0.5;
  control.c_half_gap = 0.0;
  const auto quad = make_isotropic_quadratic(1);
  const auto exact = GradientOracle::additive_gaussian(0.0);
  const double c1 = compute_C1_C2(1.0, 2.0, 1, 1.0, 1.0, 0.5, cfg.setup.schedule, 0.0).c1;
  std::vector<RecursiveParts> parts(16);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    parts[i].rhs_variation = 1e-3 * (1.0 + 0.01 * static_cast<double>(i));
    parts[i].lhs = 0.75 * c1 * parts[i].rhs_variation;
    parts[i].lhs_has_excursion = parts[i].rhs_has_excursion = true;
  }
  const auto with_c1 = evaluate_recursive_inequality(parts, control_spec, *quad, exact, cfg.setup.schedule, control);
  control.c1_scale = 0.5;
  const auto halved = evaluate_recursive_inequality(parts, control_spec, *quad, exact, cfg.setup.schedule, control);
  const bool rec_ok = rec && rec->status == CheckStatus::pass;
  report(9, k.c1 == 500.0 && rec_ok && with_c1.status == CheckStatus::pass && halved.status == CheckStatus::fail,
         fmt("C1(a=1,b=2,L=1,G=1,delta=0.5) = %.17g; golden lhs %.3e vs rhs %.3e: %s; control with C1 %s, "
             "with C1/2 %s",
             k.c1, rec ? rec->lhs : 0.0, rec ? rec->rhs : 0.0, rec ? to_string(rec->status).c_str() : "missing",
             to_string(with_c1.status).c_str(), to_string(halved.status).c_str()));

  bool nu_ok = false;
  std::string nu_detail = "nu = 0.05 missing from the golden config";
  for (std::size_t i = 0; i < st.nus.size(); ++i) {
    if (st.nus[i] != 0.05 || !res.c_nu[i]) continue;
    const auto& m = st.truncated_sums[i];
    const double c = res.c_nu[i]->c_nu;
    nu_ok = m.mean <= c + 2.0 * m.se;
    nu_detail = fmt("truncated increment sum mean %.4g (se %.2g) <= C_nu %.4g + 2 se", m.mean, m.se, c);
  }
  report(10, nu_ok, nu_detail);

  int mart_bad = 0;
  double worst_z = 0.0;
  for (const auto& c : st.checkpoints) {
    const double z = c.mart_se > 0.0 ? std::abs(c.mart_mean) / c.mart_se : (c.mart_mean == 0.0 ? 0.0 : INFINITY);
    worst_z = std::max(worst_z, z);
    mart_bad += z > 4.0;
  }

  // Window supremum on the vector-recording run.
  const auto wcfg = load_config(src / "configs" / "golden_martingale_window.json");
  const auto wout = work / "martingale_window";
  fs::remove_all(wout);
  const auto wres = run_experiment(wcfg, wout, 0).result;
  const auto& med = wres.stats.theta_median;
  bool decreasing = med.size() == 3;
  for (std::size_t i = 1; i < med.size(); ++i) decreasing = decreasing && med[i] < med[i - 1];
  report(11, mart_bad == 0 && decreasing,
         fmt("martingale increments: max |mean|/se %.2f over %zu checkpoints (<= 4); window sup medians "
             "%.3e, %.3e, %.3e at t = 1e3, 1e4, 1e5 (strictly decreasing; %lld windows clipped)",
             worst_z, st.checkpoints.size(), med.size() > 0 ? med[0] : NAN, med.size() > 1 ? med[1] : NAN,
             med.size() > 2 ? med[2] : NAN, static_cast<long long>(wres.stats.theta_clipped)));

  // Determinism: frozen golden checkpoints and split-run equivalence.
  const bool csv_same = slurp(out / "checkpoints.csv") == slurp(src / "tests" / "golden" / "checkpoints.csv");
  const auto& s = cfg.setup;
  const Vector th = s.theta1.initial(s.problem->dimension(), cfg.base_seed);
  const auto full = run(*s.problem, s.oracle, s.schedule, th, s.T, cfg.base_seed);
  const auto first = run(*s.problem, s.oracle, s.schedule, th, s.T / 2, cfg.base_seed);
  const auto resumed = resume(*s.problem, s.oracle, s.schedule, first, s.T - s.T / 2);
  const bool split_same = resumed.records == full.records && resumed.final_point == full.final_point;
  report(13, csv_same && split_same,
         fmt("golden checkpoints.csv byte-identical: %s; resume(T/2, +T/2) equals run(T) over %lld records: %s",
             csv_same ? "yes" : "no", static_cast<long long>(full.length()), split_same ? "yes" : "no"));
}

void loss_bound() {
  RandomStream rng(0x1055);
  int ok = 0;
  double worst_rel = -INFINITY, iso_eq = 0.0;
  const std::vector<ProblemPtr> problems{make_isotropic_quadratic(4, 2.5), make_high_cond_quadratic(4),
                                         make_cos_quadratic(4), make_non_coercive_demo(4)};
  for (const auto& p : problems) {
    std::vector<Vector> pts;
    for (int i = 0; i < 10000; ++i) pts.push_back(PointSampler::ball(4, 5.0).draw(rng));
    const auto r = loss_bound_check(*p, pts);
    ok += r.pass;
    worst_rel = std::max(worst_rel, r.max_relative);
  }
  for (double L : {0.5, 1.0, 3.0}) {
    const auto p = make_isotropic_quadratic(4, L);
    for (int i = 0; i < 1000; ++i) {
      const Vector x = PointSampler::ball(4, 5.0).draw(rng);
      const double g2 = p->gradient(x).squaredNorm();
      iso_eq = std::max(iso_eq, std::abs(g2 - 2.0 * L * p->value(x)) / std::max(1.0, g2));
    }
  }
  report(6, ok == 4 && iso_eq <= 1e-12,
         fmt("loss bound: %d/4 built-in problems pass at 1e4 points (worst relative %.2e); isotropic equality "
             "error %.2e (<= 1e-12)",
             ok, worst_rel, iso_eq));
}

void upcrossing_oracle() {
  std::mt19937_64 gen(0x7);
  std::uniform_int_distribution<std::size_t> len(0, 1000);
  std::uniform_int_distribution<int> lvl(0, 15);
  int agree = 0;
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> x(len(gen));
    for (auto& v : x) v = 0.2 * lvl(gen);
    const int a = lvl(gen) % 15;
    const int b = a + 1 + lvl(gen) % (15 - a);
    const double e = 0.2 * a, o = 0.2 * b;
    agree += count_upcrossings(x, Interval(e, o)) == exhaustive_upcrossings(x, e, o);
  }
  report(7, agree == 1000, fmt("up-crossing counts agree with the exhaustive scan on %d/1000 sequences", agree));
}

void ladder_cases() {
  const auto lad = build_ladder(std::vector<double>{0.5, 1.2, 2.5, 0.3}, 1.0, 2.0, 4);
  const bool hand = lad.finite_times() == std::vector<std::int64_t>{2, 3, 4};
  const auto below = build_ladder(std::vector<double>{0.1, 0.5, 0.9}, 1.0, 2.0, 3);
  const bool empty = below.finite_times().empty() && below.time(1) == kNever && below.truncated(1) == 3;
  const auto open =
      build_ladder(std::vector<double>{0.5, 5.0, 50.0, 0.2}, 1.0, std::numeric_limits<double>::infinity(), 4);
  const bool inf = open.finite_times() == std::vector<std::int64_t>{2, 4, 4};
  report(8, hand && empty && inf,
         fmt("ladder: hand example (2,3,4) %s, all-below empty %s, h2 = inf exits only below h1 %s", hand ? "ok" : "bad",
             empty ? "ok" : "bad", inf ? "ok" : "bad"));
}

void counterexample() {
  const auto t0 = std::chrono::steady_clock::now();
  std::int64_t bad = 0;
  for (std::int64_t n = 1; n <= 1'000'000; ++n) bad += counterexample_distribution(n).second_moment_exact != 1.0;
  const auto est = counterexample_tail_event(100, 2000, 100000, 12);
  const double secs = seconds_since(t0);
  report(12, bad == 0 && est.within_3se && secs < 30.0,
         fmt("two-point law: second moment 1 for all n <= 1e6 (%lld mismatches); k = 100 tail fraction %.5f vs "
             "tail sum %.5f (3 se = %.5f), %.1f s",
             static_cast<long long>(bad), est.fraction, est.tail_sum, 3.0 * est.stderr_, secs));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path src = argc > 1 ? fs::path(argv[1]) : fs::path(SGDSTOP_SOURCE_DIR);
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "sgdstop_acceptance";
  fs::create_directories(work);

  step_size_table();
  golden_ensemble(src, work);
  loss_bound();
  upcrossing_oracle();
  ladder_cases();
  counterexample();

  std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
  int failed = 0;
  std::printf("\nsummary\n");
  for (const auto& l : lines) {
    std::printf("[%s] %2d\n", l.pass ? "PASS" : "FAIL", l.id);
    failed += !l.pass;
  }
  std::printf("%zu criteria, %d failed\n", lines.size(), failed);
  return failed == 0 ? 0 : 1;
}
