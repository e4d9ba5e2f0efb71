#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "sgdstop/engine.hpp"

using namespace sgdstop;

namespace {

Vector scalar(double x) { return Vector::Constant(1, x); }

RecordPolicy keep_all() {
  RecordPolicy p;
  p.keep_iterates = true;
  p.keep_noise = true;
  return p;
}

}  // namespace

TEST_CASE("geometric contraction with a constant step") {
  const auto p = make_isotropic_quadratic(1);
  const auto tr = run(*p, GradientOracle::additive_gaussian(0.0), StepSizeSchedule::constant(0.5), scalar(1.0), 3, 0,
                      keep_all());
  REQUIRE(tr.iterates.size() == 3);
  CHECK(tr.iterates[0][0] == 1.0);
  CHECK(tr.iterates[1][0] == 0.5);
  CHECK(tr.iterates[2][0] == 0.25);
  CHECK(tr.final_point[0] == 0.125);
  CHECK(tr.records[2].t == 3);
  CHECK(tr.records[0].eps == 0.5);
}

TEST_CASE("harmonic step lands on the minimizer") {
  const auto p = make_isotropic_quadratic(1);
  const auto tr = run(*p, GradientOracle::additive_gaussian(0.0), StepSizeSchedule::power(1.0), scalar(1.0), 2, 0,
                      keep_all());
  CHECK(tr.iterates[1][0] == 0.0);
  CHECK(tr.final_point[0] == 0.0);
  CHECK(tr.final_f == 0.0);
}

TEST_CASE("records hold statistics at theta_t before the update") {
  const auto p = make_cos_quadratic(2);
  const auto o = GradientOracle::additive_gaussian(0.2);
  const auto tr = run(*p, o, StepSizeSchedule::power(0.5), Vector::Constant(2, 1.0), 20, 7, keep_all());
  for (std::size_t i = 0; i < tr.records.size(); ++i) {
    const auto& r = tr.records[i];
    const Vector& th = tr.iterates[i];
    const Vector grad = p->gradient(th);
    CHECK(r.f == p->value(th));
    CHECK(r.grad_norm == doctest::Approx(grad.norm()).epsilon(1e-14));
    // v_t = eps (grad - g) so M_t = grad . v_t
    CHECK(r.mart_inc == doctest::Approx(grad.dot(tr.noise[i])).epsilon(1e-12));
    const Vector next = i + 1 < tr.iterates.size() ? tr.iterates[i + 1] : tr.final_point;
    const Vector g = (th - next) / r.eps;
    CHECK(r.g_norm_sq == doctest::Approx(g.squaredNorm()).epsilon(1e-9));
  }
}

TEST_CASE("property: descent identity is exact on isotropic quadratics") {
  for (double L : {0.5, 1.0, 3.0}) {
    const auto p = make_isotropic_quadratic(4, L);
    const auto tr = run(*p, GradientOracle::additive_gaussian(0.3), StepSizeSchedule::power(0.6, 0.2),
                        Vector::Constant(4, 2.0), 500, 3);
    for (std::size_t i = 0; i < tr.records.size(); ++i) {
      const auto& r = tr.records[i];
      const double next = i + 1 < tr.records.size() ? tr.records[i + 1].f : tr.final_f;
      const double rho = (next - r.f) + r.eps * r.grad_norm * r.grad_norm - r.mart_inc -
                         0.5 * L * r.eps * r.eps * r.g_norm_sq;
      REQUIRE(std::abs(rho) <= 1e-12 * std::max(1.0, std::abs(r.f)));
    }
  }
}

TEST_CASE("property: exact gradient descent with eps <= 1/L is monotone") {
  const auto p = make_high_cond_quadratic(5, 100.0);
  const auto tr = run(*p, GradientOracle::additive_gaussian(0.0), StepSizeSchedule::constant(0.01),
                      Vector::Constant(5, 1.0), 2000, 0);
  for (std::size_t i = 1; i < tr.records.size(); ++i) REQUIRE(tr.records[i].f <= tr.records[i - 1].f);
  CHECK(tr.final_f <= tr.records.back().f);
}

TEST_CASE("determinism and resume") {
  const auto p = make_cos_quadratic(3);
  const auto o = GradientOracle::additive_gaussian(0.1);
  const auto s = StepSizeSchedule::power(0.4);
  const Vector th = Vector::Constant(3, 0.8);

  const auto a = run(*p, o, s, th, 200, 42);
  const auto b = run(*p, o, s, th, 200, 42);
  std::ostringstream ca, cb;
  write_records_csv(a, ca);
  write_records_csv(b, cb);
  CHECK(ca.str() == cb.str());
  CHECK(ca.str().rfind("t,eps,f,grad_norm,mart_inc,g_norm_sq\n", 0) == 0);

  const auto first = run(*p, o, s, th, 100, 42);
  const auto resumed = resume(*p, o, s, first, 100);
  CHECK(resumed.records == a.records);
  CHECK(resumed.final_point == a.final_point);
  CHECK(resumed.rng_state == a.rng_state);
  CHECK(resumed.fingerprint == a.fingerprint);

  CHECK_THROWS(resume(*p, o, StepSizeSchedule::power(0.5), first, 10));
  CHECK_THROWS(resume(*p, GradientOracle::additive_gaussian(0.2), s, first, 10));

  const auto other = run(*p, o, s, th, 200, 43);
  CHECK_FALSE(other.records == a.records);
}

TEST_CASE("replay state round trip resumes bit-exactly") {
  const auto p = make_cos_quadratic(2);
  const auto o = GradientOracle::additive_gaussian(0.1);
  const auto s = StepSizeSchedule::log_power(0.75);
  const Vector th = (Vector(2) << 0.1, -2.5).finished();
  const auto full = run(*p, o, s, th, 300, 5);
  const auto half = run(*p, o, s, th, 150, 5);

  const nlohmann::json state = replay_state(half);
  CHECK(state.at("format") == "sgdstop-replay-1");
  const auto restored = trajectory_from_replay_state(nlohmann::json::parse(state.dump()));
  CHECK(restored.final_point == half.final_point);
  const auto cont = resume(*p, o, s, restored, 150);
  REQUIRE(cont.records.size() == 150);
  for (std::size_t i = 0; i < 150; ++i) CHECK(cont.records[i] == full.records[150 + i]);
  CHECK(cont.final_point == full.final_point);
}

TEST_CASE("hexfloat and decimal formatting") {
  for (double v : {0.1, -3.25e-300, 1.0 / 3.0, 6.02e23}) CHECK(parse_hexfloat(hexfloat(v)) == v);
  CHECK(std::stod(format_double(0.1)) == 0.1);
  CHECK(std::isinf(parse_hexfloat(hexfloat(std::numeric_limits<double>::infinity()))));
}

TEST_CASE("divergence is recorded, not thrown") {
  const auto p = make_isotropic_quadratic(1);
  const auto tr = run(*p, GradientOracle::additive_gaussian(0.0), StepSizeSchedule::constant(1e10), scalar(1.0), 1000,
                      0);
  CHECK(tr.diverged);
  CHECK(tr.last_finite_step < 1000);
  CHECK(tr.last_finite_step == tr.length());
  for (const auto& r : tr.records) CHECK(std::isfinite(r.f));
  CHECK_THROWS(resume(*p, GradientOracle::additive_gaussian(0.0), StepSizeSchedule::constant(1e10), tr, 10));
}

TEST_CASE("iterate retention honours the memory budget") {
  const auto p = make_isotropic_quadratic(10);
  RecordPolicy pol;
  pol.keep_iterates = true;
  pol.iterate_budget = 100;
  const auto tr = run(*p, GradientOracle::additive_gaussian(0.1), StepSizeSchedule::power(0.6), Vector::Ones(10), 50, 1,
                      pol);
  CHECK_FALSE(tr.iterates_retained);
  CHECK(tr.iterates.empty());
  CHECK(tr.records.size() == 50);
}

TEST_CASE("table schedule shorter than the horizon is rejected") {
  const auto p = make_isotropic_quadratic(1);
  CHECK_THROWS(run(*p, GradientOracle::additive_gaussian(0.0), StepSizeSchedule::table({0.5, 0.25}), scalar(1.0), 3, 0));
}
