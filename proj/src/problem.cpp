#include "sgdstop/problem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sgdstop/json_util.hpp"

namespace sgdstop {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

class QuadraticProblem final : public Problem {
public:
  QuadraticProblem(Eigen::MatrixXd a, Certificate cert, CriticalSet crit, nlohmann::json desc)
      : Problem(static_cast<int>(a.rows()), std::move(cert), std::move(crit)),
        a_(std::move(a)),
        desc_(std::move(desc)) {}

  std::string name() const override { return desc_.at("problem").get<std::string>(); }
  nlohmann::json to_json() const override { return desc_; }
  double eval_value(const Vector& x) const override { return 0.5 * x.dot(a_ * x); }
  void eval_gradient(const Vector& x, Vector& out) const override { out.noalias() = a_ * x; }

private:
  Eigen::MatrixXd a_;
  nlohmann::json desc_;
};

class CosQuadraticProblem final : public Problem {
public:
  CosQuadraticProblem(int d, Certificate cert, CriticalSet crit)
      : Problem(d, std::move(cert), std::move(crit)), c0_(cos_quadratic_constants().c0) {}

  std::string name() const override { return "cos_quadratic"; }
  nlohmann::json to_json() const override {
    return {{"problem", "cos_quadratic"}, {"d", dim_}, {"eta", cert_.eta}};
  }
  double eval_value(const Vector& x) const override {
    double f = 0.0;
    // Each term is >= 0 mathematically; clamp the rounding residue at the minimum.
    for (Eigen::Index i = 0; i < x.size(); ++i)
      f += std::max(0.0, 0.5 * x[i] * x[i] + 2.0 * std::cos(x[i]) - c0_);
    return f;
  }
  void eval_gradient(const Vector& x, Vector& out) const override {
    out.resize(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = x[i] - 2.0 * std::sin(x[i]);
  }

private:
  double c0_;
};

class LogBarrierDemo final : public Problem {
public:
  LogBarrierDemo(int d, Certificate cert, CriticalSet crit) : Problem(d, std::move(cert), std::move(crit)) {}

  std::string name() const override { return "non_coercive_demo"; }
  nlohmann::json to_json() const override {
    return {{"problem", "non_coercive_demo"}, {"d", dim_}, {"eta", cert_.eta}, {"D_eta", cert_.d_eta}};
  }
  double eval_value(const Vector& x) const override {
    double f = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) f += std::log1p(x[i] * x[i]);
    return f;
  }
  void eval_gradient(const Vector& x, Vector& out) const override {
    out.resize(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = 2.0 * x[i] / (1.0 + x[i] * x[i]);
  }
};

class FunctionProblem final : public Problem {
public:
  FunctionProblem(std::string name, int d, std::function<double(const Vector&)> value,
                  std::function<Vector(const Vector&)> gradient, Certificate cert, CriticalSet crit)
      : Problem(d, std::move(cert), std::move(crit)),
        name_(std::move(name)),
        value_(std::move(value)),
        gradient_(std::move(gradient)) {}

  std::string name() const override { return name_; }
  nlohmann::json to_json() const override { return {{"problem", name_}, {"d", dim_}}; }
  double eval_value(const Vector& x) const override { return value_(x); }
  void eval_gradient(const Vector& x, Vector& out) const override { out = gradient_(x); }

private:
  std::string name_;
  std::function<double(const Vector&)> value_;
  std::function<Vector(const Vector&)> gradient_;
};

class RecertifiedProblem final : public Problem {
public:
  RecertifiedProblem(ProblemPtr base, Certificate cert)
      : Problem(base->dimension(), std::move(cert), base->critical_set()), base_(std::move(base)) {}

  std::string name() const override { return base_->name(); }
  nlohmann::json to_json() const override {
    auto j = base_->to_json();
    j["certificate_override"] = {{"f_star", cert_.f_star},
                                 {"L", cert_.lipschitz},
                                 {"eta", cert_.eta},
                                 {"D_eta", cert_.d_eta}};
    return j;
  }
  double eval_value(const Vector& x) const override { return base_->eval_value(x); }
  void eval_gradient(const Vector& x, Vector& out) const override { base_->eval_gradient(x, out); }

private:
  ProblemPtr base_;
};

CriticalSet origin_only(int d) {
  CriticalSet c;
  c.values = {0.0};
  c.point_count = 1;
  c.point = [d](std::uint64_t) { return Vector::Zero(d); };
  return c;
}

void require_dim(int d) {
  if (d < 1) throw std::invalid_argument("problem dimension must be >= 1");
}

}  // namespace

double CriticalSet::distance_to_value(double v) const {
  double best = kInf;
  for (double c : values) best = std::min(best, std::abs(v - c));
  return best;
}

Problem::Problem(int dim, Certificate cert, CriticalSet crit)
    : dim_(dim), cert_(std::move(cert)), crit_(std::move(crit)) {
  require_dim(dim);
}

void Problem::check_dim(const Vector& theta) const {
  if (theta.size() != dim_)
    throw std::invalid_argument("point has dimension " + std::to_string(theta.size()) + ", problem expects " +
                                std::to_string(dim_));
}

double Problem::value(const Vector& theta) const {
  check_dim(theta);
  return eval_value(theta);
}

Vector Problem::gradient(const Vector& theta) const {
  Vector out(dim_);
  gradient(theta, out);
  return out;
}

void Problem::gradient(const Vector& theta, Vector& out) const {
  check_dim(theta);
  eval_gradient(theta, out);
}

const CosQuadraticConstants& cos_quadratic_constants() {
  static const CosQuadraticConstants constants = [] {
    double lo = 1.8, hi = 2.0;  // x - 2 sin x changes sign on this bracket
    for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
      const double mid = 0.5 * (lo + hi);
      if (mid == lo || mid == hi) break;
      if (mid - 2.0 * std::sin(mid) < 0.0)
        lo = mid;
      else
        hi = mid;
    }
    const double r = 0.5 * (lo + hi);
    const double c0 = 0.5 * r * r + 2.0 * std::cos(r);
    return CosQuadraticConstants{r, c0, 2.0 - c0};
  }();
  return constants;
}

ProblemPtr make_quadratic(const Eigen::MatrixXd& a, double eta) {
  if (a.rows() != a.cols() || a.rows() < 1) throw std::invalid_argument("quadratic matrix must be square");
  if (!a.isApprox(a.transpose(), 1e-14)) throw std::invalid_argument("quadratic matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  if (!(lmin > 0.0)) throw std::invalid_argument("quadratic matrix must be positive definite");
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
  Certificate cert;
  cert.f_star = 0.0;
  cert.lipschitz = lmax;
  cert.eta = eta;
  cert.d_eta = eta * eta / (2.0 * lmin);
  cert.coercive = true;
  cert.smoothness_order = 1000;
  cert.notes = "closed form: L = max eigenvalue, D_eta = eta^2 / (2 min eigenvalue)";
  const int d = static_cast<int>(a.rows());
  nlohmann::json desc{{"problem", "quadratic"}, {"d", d}, {"eta", eta}};
  if (a.isDiagonal(0.0)) {
    std::vector<double> diag(a.diagonal().data(), a.diagonal().data() + d);
    desc["eigenvalues"] = diag;
  } else {
    std::vector<double> flat(a.data(), a.data() + a.size());
    desc["matrix"] = flat;
  }
  return std::make_shared<QuadraticProblem>(a, cert, origin_only(d), desc);
}

ProblemPtr make_isotropic_quadratic(int d, double scale, double eta) {
  require_dim(d);
  if (!(scale > 0.0)) throw std::invalid_argument("quadratic scale must be positive");
  return make_quadratic(scale * Eigen::MatrixXd::Identity(d, d), eta);
}

ProblemPtr make_high_cond_quadratic(int d, double condition, double eta) {
  if (d < 2) throw std::invalid_argument("high_cond_quadratic needs d >= 2");
  if (!(condition >= 1.0)) throw std::invalid_argument("condition number must be >= 1");
  Vector diag(d);
  for (int i = 0; i < d; ++i) diag[i] = std::pow(condition, static_cast<double>(i) / (d - 1));
  diag[d - 1] = condition;
  auto base = make_quadratic(diag.asDiagonal().toDenseMatrix(), eta);
  auto desc = base->to_json();
  desc["problem"] = "high_cond_quadratic";
  desc.erase("eigenvalues");
  desc["condition"] = condition;
  return std::make_shared<QuadraticProblem>(diag.asDiagonal().toDenseMatrix(), base->certificate(),
                                            base->critical_set(), desc);
}

ProblemPtr make_cos_quadratic(int d, double eta) {
  require_dim(d);
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
  const auto& k = cos_quadratic_constants();
  Certificate cert;
  cert.f_star = 0.0;
  cert.lipschitz = 3.0;  // second derivative 1 - 2 cos x lies in [-1, 3]
  cert.eta = eta;
  // |x - 2 sin x| < eta forces |x| < 2 + eta, and each term is at most x^2/2 + 2 - c0.
  cert.d_eta = d * (0.5 * (2.0 + eta) * (2.0 + eta) + k.saddle_gap);
  cert.coercive = true;
  cert.smoothness_order = 1000;
  cert.notes = "critical points are products of {0, +r, -r}; each zero coordinate adds 2 - c0";
  CriticalSet crit;
  for (int zeros = 0; zeros <= d; ++zeros) crit.values.push_back(zeros * k.saddle_gap);
  crit.point_count = 1;
  for (int i = 0; i < d && crit.point_count < (std::uint64_t{1} << 62) / 3; ++i) crit.point_count *= 3;
  crit.point = [d, r = k.r](std::uint64_t index) {
    Vector p(d);
    for (int i = 0; i < d; ++i) {
      const auto digit = index % 3;
      index /= 3;
      p[i] = digit == 0 ? 0.0 : (digit == 1 ? r : -r);
    }
    return p;
  };
  return std::make_shared<CosQuadraticProblem>(d, cert, crit);
}

ProblemPtr make_non_coercive_demo(int d, double eta, double d_eta) {
  require_dim(d);
  Certificate cert;
  cert.f_star = 0.0;
  cert.lipschitz = 2.0;  // second derivative 2(1 - x^2)/(1 + x^2)^2 lies in [-1/4, 2]
  cert.eta = eta;
  cert.d_eta = d_eta;
  cert.coercive = true;  // logarithmic growth only
  cert.eta_d_eta_holds = false;
  cert.smoothness_order = 1000;
  cert.notes =
      "gradient vanishes at infinity while f grows without bound: no D_eta exists for small eta; "
      "the declared pair is a candidate that the audit must reject";
  return std::make_shared<LogBarrierDemo>(d, cert, origin_only(d));
}

ProblemPtr make_function_problem(std::string name, int d, std::function<double(const Vector&)> value,
                                 std::function<Vector(const Vector&)> gradient, Certificate cert,
                                 CriticalSet crit) {
  if (!value || !gradient) throw std::invalid_argument("function problem needs value and gradient callbacks");
  return std::make_shared<FunctionProblem>(std::move(name), d, std::move(value), std::move(gradient),
                                           std::move(cert), std::move(crit));
}

ProblemPtr with_certificate(ProblemPtr base, Certificate cert) {
  return std::make_shared<RecertifiedProblem>(std::move(base), std::move(cert));
}

ProblemPtr problem_from_json(const nlohmann::json& j, const std::string& path) {
  StrictObject obj(j, path);
  const auto id = obj.required<std::string>("problem");
  const int d = obj.required<int>("d");
  if (d < 1) throw ConfigError(obj.field_path("d"), "must be >= 1");
  try {
    ProblemPtr p;
    if (id == "quadratic") {
      const double eta = obj.optional<double>("eta", 1.0);
      if (obj.has("eigenvalues")) {
        auto ev = obj.required<std::vector<double>>("eigenvalues");
        if (static_cast<int>(ev.size()) != d) throw ConfigError(obj.field_path("eigenvalues"), "length must be d");
        Vector diag = Eigen::Map<Vector>(ev.data(), d);
        p = make_quadratic(diag.asDiagonal().toDenseMatrix(), eta);
      } else {
        p = make_isotropic_quadratic(d, obj.optional<double>("scale", 1.0), eta);
      }
    } else if (id == "high_cond_quadratic") {
      p = make_high_cond_quadratic(d, obj.optional<double>("condition", 1e3), obj.optional<double>("eta", 1.0));
    } else if (id == "cos_quadratic") {
      p = make_cos_quadratic(d, obj.optional<double>("eta", 1.0));
    } else if (id == "non_coercive_demo") {
      p = make_non_coercive_demo(d, obj.optional<double>("eta", 0.01), obj.optional<double>("D_eta", 10.0));
    } else {
      throw ConfigError(obj.field_path("problem"), "unknown problem '" + id + "'");
    }
    obj.finish();
    return p;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
}

Vector PointSampler::draw(RandomStream& rng) const {
  const auto d = center.size();
  Vector dir(d);
  for (Eigen::Index i = 0; i < d; ++i) dir[i] = rng.normal();
  double n = dir.norm();
  while (n == 0.0) {
    for (Eigen::Index i = 0; i < d; ++i) dir[i] = rng.normal();
    n = dir.norm();
  }
  const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
  return center + (r / n) * dir;
}

nlohmann::json AssumptionReport::to_json() const {
  auto one = [](const AssumptionCheck& c) {
    nlohmann::json j{{"pass", c.pass}, {"worst", c.worst}, {"detail", c.detail}};
    if (c.witness) j["witness"] = std::vector<double>(c.witness->data(), c.witness->data() + c.witness->size());
    return j;
  };
  return {{"lower_bound", one(lower_bound)},
          {"lipschitz", one(lipschitz)},
          {"coercivity", one(coercivity)},
          {"eta_bound", one(eta_bound)},
          {"all_pass", all_pass()}};
}

AssumptionReport check_loss_assumptions(const Problem& problem, const PointSampler& sampler,
                                        std::int64_t n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  if (sampler.center.size() != problem.dimension())
    throw std::invalid_argument("sampler dimension does not match the problem");
  const auto& cert = problem.certificate();
  const int d = problem.dimension();
  RandomStream rng(seed, 0x5A11);
  AssumptionReport rep;

  auto unit = [&] {
    Vector u(d);
    do {
      for (int i = 0; i < d; ++i) u[i] = rng.normal();
    } while (u.norm() == 0.0);
    return Vector(u / u.norm());
  };

  auto eta_probe = [&](const Vector& x, double fx) {
    const double gn = problem.gradient(x).norm();
    if (gn < cert.eta && fx - cert.f_star >= cert.d_eta) {
      const double excess = fx - cert.f_star - cert.d_eta;
      if (rep.eta_bound.pass || excess > rep.eta_bound.worst) {
        rep.eta_bound.worst = excess;
        rep.eta_bound.witness = x;
      }
      rep.eta_bound.pass = false;
    }
  };

  rep.lower_bound.worst = -kInf;
  rep.lipschitz.worst = 0.0;
  Vector g1(d), g2(d);
  for (std::int64_t i = 0; i < n_samples; ++i) {
    const Vector x = sampler.draw(rng);
    const double fx = problem.value(x);
    const double gap = cert.f_star - fx;  // positive means below the certified bound
    if (gap > rep.lower_bound.worst) rep.lower_bound.worst = gap;
    if (gap > 1e-12 * (1.0 + std::abs(fx))) {
      if (rep.lower_bound.pass) rep.lower_bound.witness = x;
      rep.lower_bound.pass = false;
    }
    eta_probe(x, fx);

    // Alternate far pairs and close pairs; close pairs probe the local curvature.
    const Vector y = (i % 2 == 0) ? sampler.draw(rng) : Vector(x + (1e-3 * sampler.radius) * unit());
    const double dist = (x - y).norm();
    if (dist > 0.0) {
      problem.gradient(x, g1);
      problem.gradient(y, g2);
      const double ratio = (g1 - g2).norm() / dist;
      if (ratio > rep.lipschitz.worst) {
        rep.lipschitz.worst = ratio;
        if (ratio > cert.lipschitz * (1.0 + 1e-9) + 1e-12) {
          rep.lipschitz.pass = false;
          rep.lipschitz.witness = x;
        }
      }
    }
  }
  rep.lower_bound.detail = "max of f* - f over sampled points";
  rep.lipschitz.detail = "max ||grad f(x) - grad f(y)|| / ||x - y|| over sampled pairs vs certified L";

  // Rays: coercivity needs f increasing over the probe radii; the far points
  // also feed the small-gradient implication, where violations live at infinity.
  const std::int64_t n_rays = std::min<std::int64_t>(n_samples, 64);
  const double coercive_radii[] = {1e2, 1e3, 1e4};
  const double far_radii[] = {1e2, 1e3, 1e4, 1e5};
  rep.coercivity.worst = kInf;
  for (std::int64_t k = 0; k < n_rays; ++k) {
    const Vector u = unit();
    double prev = -kInf;
    for (double r : coercive_radii) {
      const Vector x = sampler.center + r * u;
      const double fx = problem.value(x);
      rep.coercivity.worst = std::min(rep.coercivity.worst, fx - prev);
      if (!(fx > prev) && rep.coercivity.pass) {
        rep.coercivity.pass = false;
        rep.coercivity.witness = x;
      }
      prev = fx;
    }
    for (double r : far_radii) {
      const Vector x = sampler.center + r * u;
      eta_probe(x, problem.value(x));
    }
  }
  rep.coercivity.detail =
      "probe only: f must increase along random rays at radii 1e2, 1e3, 1e4 (cannot prove coercivity); "
      "worst is the smallest increment";
  if (!rep.eta_bound.pass)
    rep.eta_bound.detail = "found a point with ||grad f|| < eta and f - f* >= D_eta; worst is the excess";
  else
    rep.eta_bound.detail = "no sampled or ray point violated ||grad f|| < eta => f - f* < D_eta";
  return rep;
}

}  // namespace sgdstop
