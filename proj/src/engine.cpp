#include "sgdstop/engine.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <stdexcept>

namespace sgdstop {

namespace {

constexpr std::uint64_t kStreamIndex = 0x5ED;

bool all_finite(const Vector& v) { return v.allFinite(); }

std::vector<std::string> hex_vector(const Vector& v) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(hexfloat(v[i]));
  return out;
}

Vector vector_from_hex(const nlohmann::json& j) {
  const auto items = j.get<std::vector<std::string>>();
  Vector v(static_cast<Eigen::Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) v[static_cast<Eigen::Index>(i)] = parse_hexfloat(items[i]);
  return v;
}

std::uint64_t with_run(std::uint64_t setup, std::uint64_t seed, std::int64_t T) {
  return fnv1a("seed=" + std::to_string(seed) + ";T=" + std::to_string(T), setup);
}

// Steps t_begin..t_end inclusive starting from theta = traj.final_point.
void advance(const Problem& problem, const GradientOracle& oracle, const StepSizeSchedule& schedule,
             Trajectory& traj, RandomStream& rng, std::int64_t t_begin, std::int64_t t_end) {
  const int d = problem.dimension();
  Vector theta = traj.final_point;
  Vector grad(d), g(d);
  double f = problem.eval_value(theta);
  problem.eval_gradient(theta, grad);
  const bool keep_iterates = traj.iterates_retained;

  for (std::int64_t t = t_begin; t <= t_end; ++t) {
    if (!std::isfinite(f) || !all_finite(grad)) {
      traj.diverged = true;
      traj.last_finite_step = t - 1;
      break;
    }
    const double eps = schedule.step_size(t);
    oracle.sample_given_gradient(grad, rng, g);
    const double mart = eps * grad.dot(grad - g);
    traj.records.push_back({t, eps, f, grad.norm(), mart, g.squaredNorm()});
    if (keep_iterates) traj.iterates.push_back(theta);
    if (traj.policy.keep_noise) traj.noise.push_back(eps * (grad - g));
    theta.noalias() -= eps * g;
    f = problem.eval_value(theta);
    problem.eval_gradient(theta, grad);
    traj.last_finite_step = t;
  }
  traj.final_point = theta;
  traj.final_f = f;
  if (!traj.diverged && (!std::isfinite(f) || !all_finite(theta))) traj.diverged = true;
  traj.rng_state = rng.state();
}

}  // namespace

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hexfloat(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hexfloat(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw std::invalid_argument("malformed hexfloat '" + s + "'");
  return v;
}

std::uint64_t setup_fingerprint(const Problem& problem, const GradientOracle& oracle,
                                const StepSizeSchedule& schedule, const Vector& theta1) {
  nlohmann::json j{{"problem", problem.to_json()},
                   {"oracle", oracle.to_json()},
                   {"schedule", schedule.to_json()},
                   {"theta1", hex_vector(theta1)}};
  return fnv1a(j.dump());
}

Trajectory run(const Problem& problem, const GradientOracle& oracle, const StepSizeSchedule& schedule,
               const Vector& theta1, std::int64_t T, std::uint64_t seed, const RecordPolicy& policy) {
  if (T < 1) throw std::invalid_argument("T must be >= 1");
  if (theta1.size() != problem.dimension()) throw std::invalid_argument("theta_1 dimension mismatch");
  Trajectory traj;
  traj.seed = seed;
  traj.policy = policy;
  traj.theta1 = theta1;
  traj.setup_fingerprint = setup_fingerprint(problem, oracle, schedule, theta1);
  traj.fingerprint = with_run(traj.setup_fingerprint, seed, T);
  traj.iterates_retained =
      policy.keep_iterates && static_cast<double>(problem.dimension()) * static_cast<double>(T) <=
                                  static_cast<double>(policy.iterate_budget);
  traj.records.reserve(static_cast<std::size_t>(T));
  traj.final_point = theta1;
  RandomStream rng(seed, kStreamIndex);
  advance(problem, oracle, schedule, traj, rng, 1, T);
  return traj;
}

Trajectory resume(const Problem& problem, const GradientOracle& oracle, const StepSizeSchedule& schedule,
                  const Trajectory& traj, std::int64_t additional) {
  if (additional < 1) throw std::invalid_argument("additional steps must be >= 1");
  if (traj.diverged) throw std::runtime_error("cannot resume a diverged trajectory");
  if (setup_fingerprint(problem, oracle, schedule, traj.theta1) != traj.setup_fingerprint)
    throw std::runtime_error("fingerprint mismatch: problem, oracle, schedule or theta_1 differ from the original run");
  const std::int64_t done = traj.last_finite_step;
  Trajectory out = traj;
  out.fingerprint = with_run(traj.setup_fingerprint, traj.seed, done + additional);
  if (out.iterates_retained &&
      static_cast<double>(problem.dimension()) * static_cast<double>(done + additional) >
          static_cast<double>(out.policy.iterate_budget)) {
    out.iterates_retained = false;
    out.iterates.clear();
  }
  RandomStream rng = RandomStream::from_state(traj.rng_state);
  advance(problem, oracle, schedule, out, rng, done + 1, done + additional);
  return out;
}

void write_records_csv(const Trajectory& traj, std::ostream& out) {
  out << "t,eps,f,grad_norm,mart_inc,g_norm_sq\n";
  for (const auto& r : traj.records)
    out << r.t << ',' << format_double(r.eps) << ',' << format_double(r.f) << ',' << format_double(r.grad_norm)
        << ',' << format_double(r.mart_inc) << ',' << format_double(r.g_norm_sq) << '\n';
}

nlohmann::json replay_state(const Trajectory& traj) {
  char fp[20], sfp[20];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(traj.fingerprint));
  std::snprintf(sfp, sizeof sfp, "%016llx", static_cast<unsigned long long>(traj.setup_fingerprint));
  return {{"format", "sgdstop-replay-1"},
          {"fingerprint", fp},
          {"setup_fingerprint", sfp},
          {"seed", traj.seed},
          {"steps_done", traj.last_finite_step},
          {"diverged", traj.diverged},
          {"theta1", hex_vector(traj.theta1)},
          {"final_point", hex_vector(traj.final_point)},
          {"final_f", hexfloat(traj.final_f)},
          {"keep_noise", traj.policy.keep_noise},
          {"rng_state", traj.rng_state}};
}

Trajectory trajectory_from_replay_state(const nlohmann::json& j) {
  if (j.value("format", "") != "sgdstop-replay-1") throw std::invalid_argument("not a replay state record");
  Trajectory t;
  t.fingerprint = std::stoull(j.at("fingerprint").get<std::string>(), nullptr, 16);
  t.setup_fingerprint = std::stoull(j.at("setup_fingerprint").get<std::string>(), nullptr, 16);
  t.seed = j.at("seed").get<std::uint64_t>();
  t.last_finite_step = j.at("steps_done").get<std::int64_t>();
  t.diverged = j.at("diverged").get<bool>();
  t.theta1 = vector_from_hex(j.at("theta1"));
  t.final_point = vector_from_hex(j.at("final_point"));
  t.final_f = parse_hexfloat(j.at("final_f").get<std::string>());
  t.policy.keep_noise = j.at("keep_noise").get<bool>();
  t.rng_state = j.at("rng_state").get<std::string>();
  return t;
}

}  // namespace sgdstop
