#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "sgdstop/ensemble.hpp"

using namespace sgdstop;

namespace {

EnsembleSetup quadratic_setup(double sigma, double q, std::int64_t T) {
  EnsembleSetup s{make_isotropic_quadratic(3), GradientOracle::additive_gaussian(sigma), StepSizeSchedule::power(q),
                  {}, T, {}};
  s.theta1.kind = Theta1Policy::Kind::fixed;
  s.theta1.value = Vector::Constant(3, 1.0);
  return s;
}

}  // namespace

TEST_CASE("geometric checkpoints") {
  CHECK(geometric_checkpoints(1000, 4) == std::vector<std::int64_t>{125, 250, 500, 1000});
  CHECK(geometric_checkpoints(3, 8) == std::vector<std::int64_t>{1, 2, 3});
}

TEST_CASE("theta1 policies") {
  Theta1Policy ball;
  ball.kind = Theta1Policy::Kind::ball;
  ball.radius = 2.0;
  const Vector a = ball.initial(4, 10), b = ball.initial(4, 10), c = ball.initial(4, 11);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.norm() <= 2.0);
  CHECK(Theta1Policy{}.initial(3, 5) == Vector::Zero(3));
  CHECK_THROWS(Theta1Policy::from_json({{"policy", "fixed"}, {"value", {1.0, 2.0}}}, 3));
}

TEST_CASE("zero noise gives identical trajectories") {
  EnsemblePlan plan;
  plan.n = 5;
  plan.base_seed = 100;
  plan.n_checkpoints = 4;
  plan.keep_trajectories = true;
  const auto res = run_ensemble(quadratic_setup(0.0, 0.75, 400), plan);
  REQUIRE(res.trajectories.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(res.trajectories[i].seed == 100 + i);
    CHECK(res.trajectories[i].records == res.trajectories[0].records);
  }
  for (const auto& c : res.stats.checkpoints) {
    CHECK(c.stderr_grad_sq == 0.0);
    CHECK(c.mart_mean == 0.0);
  }
  CHECK(res.guarantee == "relaxed conditions hold");
}

TEST_CASE("property: aggregation ignores completion order") {
  EnsembleSetup setup = quadratic_setup(0.3, 0.6, 300);
  EnsemblePlan plan;
  plan.n = 12;
  plan.base_seed = 7;
  plan.n_checkpoints = 5;
  plan.upcross_intervals.emplace_back(0.01, 0.05);
  plan.nus = {0.05};
  const auto cps = geometric_checkpoints(setup.T, plan.n_checkpoints);
  std::vector<TrajectorySummary> sums;
  for (std::int64_t i = 0; i < plan.n; ++i) {
    const auto seed = plan.base_seed + static_cast<std::uint64_t>(i);
    const auto tr = run(*setup.problem, setup.oracle, setup.schedule, setup.theta1.initial(3, seed), setup.T, seed);
    sums.push_back(summarize(tr, setup, plan, cps));
  }
  const std::string ref = aggregate(sums, cps, plan).to_json().dump();
  std::mt19937_64 gen(1);
  for (int k = 0; k < 10; ++k) {
    std::shuffle(sums.begin(), sums.end(), gen);
    REQUIRE(aggregate(sums, cps, plan).to_json().dump() == ref);
  }
  plan.threads = 3;
  const auto pooled = run_ensemble(setup, plan);
  CHECK(pooled.stats.to_json().dump() == ref);
}

TEST_CASE("non-relaxed schedules are labelled") {
  EnsemblePlan plan;
  plan.n = 2;
  const auto res = run_ensemble(quadratic_setup(0.1, 0.3, 100), plan);
  CHECK(res.guarantee == "no guarantee");
  CHECK(res.classification.relaxed == Verdict::no);
}

TEST_CASE("a throwing seed becomes a failed entry") {
  EnsembleSetup setup = quadratic_setup(0.1, 0.6, 10);
  setup.schedule = StepSizeSchedule::table({0.5, 0.25});
  EnsemblePlan plan;
  plan.n = 3;
  const auto res = run_ensemble(setup, plan);
  CHECK(res.stats.failed_count == 3);
  CHECK(res.stats.n_used == 0);
  for (const auto& s : res.summaries) {
    CHECK(s.failed);
    CHECK_FALSE(s.error.empty());
  }
}

TEST_CASE("critical value match") {
  EnsemblePlan plan;
  plan.n = 4;
  auto res = run_ensemble(quadratic_setup(0.0, 0.75, 2000), plan);
  const auto p = make_isotropic_quadratic(3);
  const auto m = critical_value_match(res.summaries, *p, 1e-3);
  CHECK(m.fraction == 1.0);
  CHECK(m.status == CheckStatus::pass);

  res.summaries[0].diverged = true;
  res.summaries[1].final_f = 5.0;
  const auto m2 = critical_value_match(res.summaries, *p, 1e-3);
  CHECK(m2.n_excluded == 1);
  CHECK(m2.n_used == 3);
  CHECK(m2.fraction == doctest::Approx(2.0 / 3.0));

  const auto unknown = make_function_problem(
      "u", 1, [](const Vector& x) { return x.squaredNorm(); }, [](const Vector& x) -> Vector { return 2.0 * x; }, {});
  CHECK(critical_value_match(res.summaries, *unknown, 1e-3).status == CheckStatus::inconclusive);
}

TEST_CASE("checkpoint csv header") {
  EnsemblePlan plan;
  plan.n = 2;
  plan.n_checkpoints = 3;
  const auto res = run_ensemble(quadratic_setup(0.1, 0.6, 64), plan);
  std::ostringstream os;
  res.stats.write_checkpoints_csv(os);
  const auto s = os.str();
  CHECK(s.rfind("t,mean_grad_sq,stderr,median_f_gap,as_fraction\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 4);
}

TEST_CASE("mean and standard error") {
  const auto m = mean_and_stderr({1.0, 2.0, 3.0, 4.0});
  CHECK(m.mean == 2.5);
  CHECK(m.se == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
  CHECK(m.n == 4);
}

TEST_CASE("counterexample law") {
  const auto one = counterexample_distribution(1);
  CHECK(one.p_zero == 0.0);
  CHECK(one.atom == 1.0);
  CHECK(one.second_moment_exact == 1.0);
  for (std::int64_t n : {2, 3, 10, 999, 1000000}) CHECK(counterexample_distribution(n).second_moment_exact == 1.0);
  CHECK(counterexample_distribution(10).p_zero == doctest::Approx(0.99));

  const auto law = counterexample_distribution(5);
  RandomStream rng(3);
  int hits = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = law.sample(rng);
    REQUIRE((z == 0.0 || z == 5.0));
    hits += z != 0.0;
  }
  const double se = std::sqrt(0.04 * 0.96 / n);
  CHECK(std::abs(hits / double(n) - 0.04) <= 4.0 * se);
}

TEST_CASE("counterexample tail event") {
  const auto est = counterexample_tail_event(100, 2000, 20000, 9);
  double tail = 0.0;
  for (int n = 101; n <= 2000; ++n) tail += 1.0 / (double(n) * n);
  CHECK(est.tail_sum == doctest::Approx(tail).epsilon(1e-12));
  CHECK(est.exact == doctest::Approx(1.0 - 100.0 * 2001.0 / (101.0 * 2000.0)));
  CHECK(est.exact <= est.tail_sum);
  CHECK(est.tail_sum <= 1.0 / 100.0);
  CHECK(est.within_3se);
  CHECK(est.union_bound_holds);
}
