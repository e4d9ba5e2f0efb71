#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sgdstop/rng.hpp"

namespace sgdstop {

using Vector = Eigen::VectorXd;

/// Constants a problem vouches for. They are data, never runtime estimates.
struct Certificate {
  double f_star = 0.0;
  double lipschitz = 1.0;
  double eta = 1.0;
  double d_eta = 1.0;
  bool coercive = true;
  /// False when (eta, D_eta) is a candidate pair known not to satisfy the
  /// small-gradient implication.
  bool eta_d_eta_holds = true;
  /// Recorded, never verified.
  int smoothness_order = 1;
  std::string notes;
};

/// Critical values (sorted, distinct) plus an enumerator over critical points.
/// An empty `values` means Crit(f) is unknown.
struct CriticalSet {
  std::vector<double> values;
  std::uint64_t point_count = 0;
  std::function<Vector(std::uint64_t)> point;

  bool known() const { return !values.empty(); }
  /// Distance from v to the nearest critical value (inf when unknown).
  double distance_to_value(double v) const;
};

/// Differentiable objective on R^d with certified constants.
class Problem {
public:
  virtual ~Problem() = default;

  int dimension() const { return dim_; }
  const Certificate& certificate() const { return cert_; }
  const CriticalSet& critical_set() const { return crit_; }

  /// Throw std::invalid_argument on dimension mismatch.
  double value(const Vector& theta) const;
  Vector gradient(const Vector& theta) const;
  void gradient(const Vector& theta, Vector& out) const;

  virtual std::string name() const = 0;
  /// {"problem": name, ...parameters}
  virtual nlohmann::json to_json() const = 0;

  // Unchecked evaluation; the engine calls these on its hot path.
  virtual double eval_value(const Vector& theta) const = 0;
  virtual void eval_gradient(const Vector& theta, Vector& out) const = 0;

protected:
  Problem(int dim, Certificate cert, CriticalSet crit);
  void check_dim(const Vector& theta) const;

  int dim_;
  Certificate cert_;
  CriticalSet crit_;
};

using ProblemPtr = std::shared_ptr<const Problem>;

/// f = 1/2 theta^T A theta, A symmetric positive definite.
ProblemPtr make_quadratic(const Eigen::MatrixXd& a, double eta = 1.0);
ProblemPtr make_isotropic_quadratic(int d, double scale = 1.0, double eta = 1.0);
/// Diagonal quadratic with eigenvalues geometric from 1 to `condition`.
ProblemPtr make_high_cond_quadratic(int d, double condition = 1e3, double eta = 1.0);
/// f = sum_i (1/2 theta_i^2 + 2 cos theta_i - c0), c0 chosen so f* = 0.
ProblemPtr make_cos_quadratic(int d, double eta = 1.0);
/// f = sum_i log(1 + theta_i^2): smooth, gradient vanishing at infinity.
ProblemPtr make_non_coercive_demo(int d, double eta = 0.01, double d_eta = 10.0);

/// User problem from value/gradient callbacks.
ProblemPtr make_function_problem(std::string name, int d, std::function<double(const Vector&)> value,
                                 std::function<Vector(const Vector&)> gradient, Certificate cert,
                                 CriticalSet crit = {});

/// Same function, different declared constants (debug fixtures such as an
/// understated L).
ProblemPtr with_certificate(ProblemPtr base, Certificate cert);

ProblemPtr problem_from_json(const nlohmann::json& j, const std::string& path = "/problem");

/// Root r of r = 2 sin r on (1.8, 2.0) and the per-coordinate minimum
/// c0 = r^2/2 + 2 cos r of the cos-quadratic.
struct CosQuadraticConstants {
  double r;
  double c0;
  double saddle_gap;  // 2 - c0: each coordinate at 0 adds this to f
};
const CosQuadraticConstants& cos_quadratic_constants();

/// Uniform distribution on a ball.
struct PointSampler {
  Vector center;
  double radius = 1.0;

  static PointSampler ball(int d, double radius) { return {Vector::Zero(d), radius}; }
  Vector draw(RandomStream& rng) const;
};

struct AssumptionCheck {
  bool pass = true;
  double worst = 0.0;
  std::optional<Vector> witness;
  std::string detail;
};

struct AssumptionReport {
  AssumptionCheck lower_bound;
  AssumptionCheck lipschitz;
  AssumptionCheck coercivity;
  AssumptionCheck eta_bound;
  bool all_pass() const {
    return lower_bound.pass && lipschitz.pass && coercivity.pass && eta_bound.pass;
  }
  nlohmann::json to_json() const;
};

/// Sampled audit of the loss-function assumptions: lower bound, Lipschitz
/// gradient on sampled pairs, coercivity along random rays, and the
/// small-gradient implication on sampled and far-out ray points.
AssumptionReport check_loss_assumptions(const Problem& problem, const PointSampler& sampler,
                                        std::int64_t n_samples, std::uint64_t seed);

}  // namespace sgdstop
