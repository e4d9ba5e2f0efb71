#include "sgdstop/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sgdstop/json_util.hpp"

namespace sgdstop {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void validate(const NoiseModel& model, const DeclaredMoments& dm) {
  if (!(dm.p > 2.0)) throw std::invalid_argument("declared p must be > 2");
  if (!(dm.G > 0.0) || !(dm.M0 > 0.0) || !(dm.M1 > 0.0) || !(dm.delta > 0.0))
    throw std::invalid_argument("declared G, M0, M1 and delta must be positive");
  std::visit(overloaded{
                 [](const AdditiveGaussian& m) {
                   if (!(m.sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
                 },
                 [](const AdditiveStudentT& m) {
                   if (!(m.dof > 2.0)) throw std::invalid_argument("Student-t dof must be > 2");
                   if (!(m.scale > 0.0)) throw std::invalid_argument("Student-t scale must be positive");
                 },
                 [](const MultiplicativeGaussian& m) {
                   if (!(m.sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
                 },
                 [](const ParetoAdditive& m) {
                   if (!m.centered) throw std::invalid_argument("uncentered heavy-tailed noise is biased; rejected");
                   if (!(m.alpha > 0.0) || !(m.scale > 0.0))
                     throw std::invalid_argument("Pareto alpha and scale must be positive");
                 },
                 [](const FiniteSum& m) {
                   if (m.offsets.empty()) throw std::invalid_argument("finite sum needs components");
                   if (m.batch < 1 || m.batch > m.offsets.size())
                     throw std::invalid_argument("batch size must lie in [1, n_components]");
                 },
             },
             model);
}

}  // namespace

std::vector<Vector> make_finite_sum_offsets(int d, std::size_t n_components, double spread, std::uint64_t seed) {
  if (n_components < 1) throw std::invalid_argument("n_components must be >= 1");
  RandomStream rng(seed, 0xF1);
  std::vector<Vector> offsets(n_components, Vector(d));
  Vector mean = Vector::Zero(d);
  for (auto& o : offsets) {
    for (int i = 0; i < d; ++i) o[i] = spread * rng.normal();
    mean += o;
  }
  mean /= static_cast<double>(n_components);
  for (auto& o : offsets) o -= mean;
  return offsets;
}

GradientOracle::GradientOracle(NoiseModel model, DeclaredMoments declared)
    : model_(std::move(model)), declared_(declared) {
  validate(model_, declared_);
}

GradientOracle GradientOracle::additive_gaussian(double sigma, DeclaredMoments declared) {
  return GradientOracle(AdditiveGaussian{sigma}, declared);
}

bool GradientOracle::exact() const {
  return std::visit(overloaded{
                        [](const AdditiveGaussian& m) { return m.sigma == 0.0 && m.bias == 0.0; },
                        [](const MultiplicativeGaussian& m) { return m.sigma == 0.0; },
                        [](const FiniteSum& m) { return m.batch == m.offsets.size(); },
                        [](const auto&) { return false; },
                    },
                    model_);
}

void GradientOracle::sample_given_gradient(const Vector& grad, RandomStream& rng, Vector& out) const {
  const auto d = grad.size();
  out.resize(d);
  std::visit(overloaded{
                 [&](const AdditiveGaussian& m) {
                   if (m.sigma == 0.0) {
                     out = grad.array() + m.bias;
                     return;
                   }
                   for (Eigen::Index i = 0; i < d; ++i) out[i] = grad[i] + m.bias + m.sigma * rng.normal();
                 },
                 [&](const AdditiveStudentT& m) {
                   for (Eigen::Index i = 0; i < d; ++i) {
                     const double z = rng.normal();
                     const double chi2 = 2.0 * rng.gamma(0.5 * m.dof);
                     out[i] = grad[i] + m.scale * z / std::sqrt(chi2 / m.dof);
                   }
                 },
                 [&](const MultiplicativeGaussian& m) {
                   if (m.sigma == 0.0) {
                     out = grad;
                     return;
                   }
                   const double z = rng.normal();
                   for (Eigen::Index i = 0; i < d; ++i)
                     out[i] = grad[i] * (1.0 + m.sigma * z) + m.sigma * rng.normal();
                 },
                 [&](const ParetoAdditive& m) {
                   for (Eigen::Index i = 0; i < d; ++i) {
                     const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
                     const double u = 1.0 - rng.uniform();  // (0, 1]
                     out[i] = grad[i] + m.scale * sign * std::pow(u, -1.0 / m.alpha);
                   }
                 },
                 [&](const FiniteSum& m) {
                   const std::size_t n = m.offsets.size();
                   out = grad;
                   if (m.batch == n) return;  // offsets sum to zero
                   std::vector<std::size_t> idx(n);
                   std::iota(idx.begin(), idx.end(), std::size_t{0});
                   Vector acc = Vector::Zero(d);
                   for (std::size_t k = 0; k < m.batch; ++k) {
                     const auto j = k + static_cast<std::size_t>(rng.below(n - k));
                     std::swap(idx[k], idx[j]);
                     acc += m.offsets[idx[k]];
                   }
                   out += acc / static_cast<double>(m.batch);
                 },
             },
             model_);
}

Vector GradientOracle::sample(const Problem& problem, const Vector& theta, RandomStream& rng) const {
  Vector grad = problem.gradient(theta);
  Vector out;
  sample_given_gradient(grad, rng, out);
  return out;
}

std::optional<double> GradientOracle::analytic_second_moment(const Vector& grad) const {
  const double g2 = grad.squaredNorm();
  const auto d = static_cast<double>(grad.size());
  return std::visit(overloaded{
                        [&](const AdditiveGaussian& m) -> std::optional<double> {
                          const Vector shifted = grad.array() + m.bias;
                          return shifted.squaredNorm() + m.sigma * m.sigma * d;
                        },
                        [&](const AdditiveStudentT& m) -> std::optional<double> {
                          return g2 + m.scale * m.scale * m.dof / (m.dof - 2.0) * d;
                        },
                        [&](const MultiplicativeGaussian& m) -> std::optional<double> {
                          return g2 * (1.0 + m.sigma * m.sigma) + m.sigma * m.sigma * d;
                        },
                        [&](const ParetoAdditive& m) -> std::optional<double> {
                          if (!(m.alpha > 2.0)) return std::nullopt;
                          return g2 + m.scale * m.scale * m.alpha / (m.alpha - 2.0) * d;
                        },
                        [&](const FiniteSum& m) -> std::optional<double> {
                          const auto n = static_cast<double>(m.offsets.size());
                          const auto b = static_cast<double>(m.batch);
                          double tr = 0.0;
                          for (const auto& o : m.offsets) tr += o.squaredNorm();
                          tr /= n;
                          if (m.batch == m.offsets.size()) return g2;
                          // sampling without replacement: Var(mean) = tr/b * (n - b)/(n - 1)
                          return g2 + tr / b * (n - b) / (n - 1.0);
                        },
                    },
                    model_);
}

nlohmann::json GradientOracle::to_json() const {
  nlohmann::json j = std::visit(
      overloaded{
          [](const AdditiveGaussian& m) {
            nlohmann::json o{{"oracle", "additive_gaussian"}, {"sigma", m.sigma}};
            if (m.bias != 0.0) o["bias"] = m.bias;
            return o;
          },
          [](const AdditiveStudentT& m) {
            return nlohmann::json{{"oracle", "additive_student_t"}, {"dof", m.dof}, {"scale", m.scale}};
          },
          [](const MultiplicativeGaussian& m) {
            return nlohmann::json{{"oracle", "multiplicative_gaussian"}, {"sigma", m.sigma}};
          },
          [](const ParetoAdditive& m) {
            return nlohmann::json{{"oracle", "pareto_additive"}, {"alpha", m.alpha}, {"scale", m.scale}};
          },
          [](const FiniteSum& m) {
            std::vector<std::vector<double>> offsets;
            for (const auto& o : m.offsets) offsets.emplace_back(o.data(), o.data() + o.size());
            return nlohmann::json{{"oracle", "finite_sum"}, {"batch", m.batch}, {"offsets", offsets}};
          },
      },
      model_);
  j["G"] = declared_.G;
  j["p"] = declared_.p;
  j["M0"] = declared_.M0;
  j["M1"] = declared_.M1;
  j["delta"] = declared_.delta;
  return j;
}

GradientOracle GradientOracle::from_json(const nlohmann::json& j, int dimension, const std::string& path) {
  StrictObject obj(j, path);
  const auto id = obj.required<std::string>("oracle");
  DeclaredMoments dm;
  dm.G = obj.optional<double>("G", dm.G);
  dm.p = obj.optional<double>("p", dm.p);
  dm.M0 = obj.optional<double>("M0", dm.M0);
  dm.M1 = obj.optional<double>("M1", dm.M1);
  dm.delta = obj.optional<double>("delta", dm.delta);
  NoiseModel model;
  if (id == "additive_gaussian") {
    model = AdditiveGaussian{obj.required<double>("sigma"), obj.optional<double>("bias", 0.0)};
  } else if (id == "additive_student_t") {
    model = AdditiveStudentT{obj.required<double>("dof"), obj.required<double>("scale")};
  } else if (id == "multiplicative_gaussian") {
    model = MultiplicativeGaussian{obj.required<double>("sigma")};
  } else if (id == "pareto_additive") {
    model = ParetoAdditive{obj.required<double>("alpha"), obj.required<double>("scale"),
                           obj.optional<bool>("centered", true)};
  } else if (id == "finite_sum") {
    const auto batch = obj.required<std::size_t>("batch");
    if (obj.has("offsets")) {
      std::vector<Vector> offsets;
      for (const auto& row : obj.required<std::vector<std::vector<double>>>("offsets")) {
        if (static_cast<int>(row.size()) != dimension)
          throw ConfigError(obj.field_path("offsets"), "offset length must equal the problem dimension");
        offsets.emplace_back(Eigen::Map<const Vector>(row.data(), dimension));
      }
      model = FiniteSum{std::move(offsets), batch};
    } else {
      const auto n = obj.required<std::size_t>("n_components");
      const double spread = obj.optional<double>("spread", 1.0);
      const auto seed = obj.optional<std::uint64_t>("component_seed", 0);
      model = FiniteSum{make_finite_sum_offsets(dimension, n, spread, seed), batch};
    }
  } else {
    throw ConfigError(obj.field_path("oracle"), "unknown oracle '" + id + "'");
  }
  obj.finish();
  try {
    return GradientOracle(std::move(model), dm);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

nlohmann::json UnbiasedReport::to_json() const {
  return {{"z_scores", z_scores}, {"max_abs_z", max_abs_z}, {"pass", pass}};
}

UnbiasedReport check_unbiased(const GradientOracle& oracle, const Problem& problem, const Vector& theta,
                              std::int64_t n, std::uint64_t seed) {
  if (n < 100) throw std::invalid_argument("check_unbiased needs n >= 100");
  const Vector grad = problem.gradient(theta);
  const auto d = grad.size();
  RandomStream rng(seed, 0xB1A5);
  // Welford per component
  Vector mean = Vector::Zero(d), m2 = Vector::Zero(d), g(d);
  for (std::int64_t k = 1; k <= n; ++k) {
    oracle.sample_given_gradient(grad, rng, g);
    const Vector delta = g - mean;
    mean += delta / static_cast<double>(k);
    m2.array() += delta.array() * (g - mean).array();
  }
  UnbiasedReport rep;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double sd = std::sqrt(m2[i] / static_cast<double>(n - 1));
    const double diff = mean[i] - grad[i];
    double z;
    if (sd > 0.0)
      z = diff / (sd / std::sqrt(static_cast<double>(n)));
    else
      z = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    rep.z_scores.push_back(z);
    rep.max_abs_z = std::max(rep.max_abs_z, std::abs(z));
  }
  rep.pass = rep.max_abs_z <= 4.0;
  return rep;
}

nlohmann::json WeakGrowthReport::to_json() const {
  return {{"G_hat", g_hat}, {"per_point", per_point}, {"pass", pass}};
}

WeakGrowthReport check_weak_growth(const GradientOracle& oracle, const Problem& problem,
                                   const std::vector<Vector>& points, std::int64_t n_per_point, std::uint64_t seed) {
  if (points.empty()) throw std::invalid_argument("check_weak_growth needs at least one point");
  if (n_per_point < 1) throw std::invalid_argument("n_per_point must be >= 1");
  RandomStream rng(seed, 0x6C0);
  WeakGrowthReport rep;
  Vector g;
  for (const auto& x : points) {
    const Vector grad = problem.gradient(x);
    double acc = 0.0;
    for (std::int64_t k = 0; k < n_per_point; ++k) {
      oracle.sample_given_gradient(grad, rng, g);
      acc += g.squaredNorm();
    }
    const double ratio = acc / static_cast<double>(n_per_point) / (grad.squaredNorm() + 1.0);
    rep.per_point.push_back(ratio);
    rep.g_hat = std::max(rep.g_hat, ratio);
  }
  rep.pass = rep.g_hat <= oracle.declared().G * 1.1;
  return rep;
}

nlohmann::json LocalMomentReport::to_json() const {
  return {{"evaluable", evaluable},
          {"note", note},
          {"order", order},
          {"declared_bound", declared_bound},
          {"estimated_bound", estimated_bound},
          {"estimates_by_size", estimates_by_size},
          {"growth", growth},
          {"stabilized", stabilized},
          {"points_used", points_used},
          {"pass", pass}};
}

LocalMomentReport check_local_moments(const GradientOracle& oracle, const Problem& problem, MomentRegion region,
                                      MomentOrder order, const PointSampler& sampler, std::uint64_t seed,
                                      const LocalMomentOptions& options) {
  const auto& dm = oracle.declared();
  const auto& cert = problem.certificate();
  const auto& sizes = options.sample_sizes;
  if (sizes.empty() || !std::is_sorted(sizes.begin(), sizes.end()) || sizes.front() < 1)
    throw std::invalid_argument("sample_sizes must be nonempty, positive and increasing");
  if (options.replicates < 1) throw std::invalid_argument("replicates must be >= 1");

  LocalMomentReport rep;
  rep.order = order == MomentOrder::p ? dm.p : 2.0 * dm.p - 2.0;
  rep.declared_bound = order == MomentOrder::p ? std::pow(dm.M0, rep.order) : std::pow(dm.M1, rep.order);
  rep.note = "heavy-tail detection by non-stabilization across sample sizes (heuristic)";

  if (region == MomentRegion::s_delta && !problem.critical_set().known()) {
    rep.evaluable = false;
    rep.note = "S_delta not evaluable: problem has no certified critical values";
    return rep;
  }
  auto in_region = [&](const Vector& x) {
    const double f = problem.value(x);
    if (region == MomentRegion::sublevel) return f - cert.f_star < cert.d_eta;
    return problem.critical_set().distance_to_value(f) < dm.delta;
  };

  RandomStream point_rng(seed, 0x9E61);
  std::vector<Vector> points;
  for (std::int64_t a = 0; a < options.max_attempts && static_cast<std::int64_t>(points.size()) < options.n_points;
       ++a) {
    Vector x = sampler.draw(point_rng);
    if (in_region(x)) points.push_back(std::move(x));
  }
  rep.points_used = static_cast<std::int64_t>(points.size());
  if (points.empty()) {
    rep.evaluable = false;
    rep.note = "region empty under the sampler";
    return rep;
  }

  RandomStream rng(seed, 0x30E7);
  rep.estimates_by_size.assign(sizes.size(), 0.0);
  rep.growth = 0.0;
  Vector g;
  for (const auto& x : points) {
    const Vector grad = problem.gradient(x);
    std::vector<std::vector<double>> by_size(sizes.size());
    for (int r = 0; r < options.replicates; ++r) {
      double acc = 0.0;
      std::size_t next = 0;
      for (std::int64_t k = 1; k <= sizes.back(); ++k) {
        oracle.sample_given_gradient(grad, rng, g);
        acc += std::pow(g.norm(), rep.order);
        if (k == sizes[next]) {
          by_size[next].push_back(acc / static_cast<double>(k));
          ++next;
        }
      }
    }
    std::vector<double> est;
    for (auto& v : by_size) est.push_back(median(v));
    const double growth = est.front() > 0.0 ? est.back() / est.front() : 1.0;
    rep.growth = std::max(rep.growth, growth);
    if (est.back() >= rep.estimated_bound) {
      rep.estimated_bound = est.back();
      rep.estimates_by_size = est;
    }
  }
  rep.stabilized = rep.growth <= 1.0 + options.growth_tolerance;
  rep.pass = rep.stabilized && rep.estimated_bound <= rep.declared_bound;
  return rep;
}

}  // namespace sgdstop
