#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sgdstop/problem.hpp"
#include "sgdstop/rng.hpp"

namespace sgdstop {

/// g = grad f + sigma Z (+ bias on every coordinate; a nonzero bias is a
/// deliberately broken debug model).
struct AdditiveGaussian {
  double sigma;
  double bias = 0.0;
};

/// g = grad f + scale T_dof, T_dof coordinate-wise Student-t.
struct AdditiveStudentT {
  double dof;
  double scale;
};

/// g = grad f (1 + sigma Z) + sigma Z', Z scalar, Z' a vector.
struct MultiplicativeGaussian {
  double sigma;
};

/// g = grad f + scale S P coordinate-wise, S a random sign and P Pareto(alpha)
/// on [1, inf). E|noise|^k is finite iff k < alpha.
struct ParetoAdditive {
  double alpha;
  double scale;
  bool centered = true;
};

/// Minibatch over synthetic components grad f_i = grad f + offset_i with the
/// offsets summing to zero; `batch` components drawn without replacement.
struct FiniteSum {
  std::vector<Vector> offsets;
  std::size_t batch;
};

using NoiseModel = std::variant<AdditiveGaussian, AdditiveStudentT, MultiplicativeGaussian, ParetoAdditive, FiniteSum>;

/// Declared moment constants: weak growth G, moment order p with local bound
/// M0 on the sublevel set, and M1 for order 2p-2 on S_delta.
struct DeclaredMoments {
  double G = 1.0;
  double p = 3.0;
  double M0 = 10.0;
  double M1 = 50.0;
  double delta = 0.05;
};

/// Synthetic finite-sum offsets: n_components Gaussian vectors with the given
/// spread, recentered to sum to zero.
std::vector<Vector> make_finite_sum_offsets(int d, std::size_t n_components, double spread, std::uint64_t seed);

class GradientOracle {
public:
  GradientOracle(NoiseModel model, DeclaredMoments declared);

  static GradientOracle additive_gaussian(double sigma, DeclaredMoments declared = {});

  const NoiseModel& model() const { return model_; }
  const DeclaredMoments& declared() const { return declared_; }

  /// True when every sample equals the exact gradient.
  bool exact() const;

  /// Draw g given the exact gradient at the current point.
  void sample_given_gradient(const Vector& grad, RandomStream& rng, Vector& out) const;
  Vector sample(const Problem& problem, const Vector& theta, RandomStream& rng) const;

  /// E||g||^2 in closed form when the model has one.
  std::optional<double> analytic_second_moment(const Vector& grad) const;

  nlohmann::json to_json() const;
  static GradientOracle from_json(const nlohmann::json& j, int dimension, const std::string& path = "/oracle");

private:
  NoiseModel model_;
  DeclaredMoments declared_;
};

struct UnbiasedReport {
  std::vector<double> z_scores;
  double max_abs_z = 0.0;
  bool pass = true;
  nlohmann::json to_json() const;
};

/// Per-component z-scores of mean(g) - grad f(theta) from n fresh draws;
/// passes iff every |z| <= 4.
UnbiasedReport check_unbiased(const GradientOracle& oracle, const Problem& problem, const Vector& theta,
                              std::int64_t n, std::uint64_t seed);

struct WeakGrowthReport {
  double g_hat = 0.0;
  std::vector<double> per_point;
  bool pass = true;
  nlohmann::json to_json() const;
};

/// G_hat = max over points of mean||g||^2 / (||grad f||^2 + 1); passes iff
/// G_hat <= 1.1 declared G.
WeakGrowthReport check_weak_growth(const GradientOracle& oracle, const Problem& problem,
                                   const std::vector<Vector>& points, std::int64_t n_per_point, std::uint64_t seed);

enum class MomentRegion { sublevel, s_delta };
enum class MomentOrder { p, two_p_minus_two };

struct LocalMomentOptions {
  std::int64_t n_points = 4;
  std::int64_t max_attempts = 10000;
  /// Increasing sample sizes; divergence shows as growth across them.
  std::vector<std::int64_t> sample_sizes{10'000, 100'000, 1'000'000};
  int replicates = 8;
  /// Largest ratio est(last size) / est(first size) still called stable.
  double growth_tolerance = 0.25;
};

struct LocalMomentReport {
  bool evaluable = true;
  std::string note;
  double order = 0.0;
  double declared_bound = 0.0;  // M0^p or M1^(2p-2)
  double estimated_bound = 0.0;
  std::vector<double> estimates_by_size;  // worst point, median of replicates
  double growth = 1.0;
  bool stabilized = true;
  bool pass = false;
  std::int64_t points_used = 0;
  nlohmann::json to_json() const;
};

/// Empirical E||g||^order at region points drawn from `sampler`. Conditional
/// and unconditional moments coincide because draws at a fixed point are
/// independent of history. Heavy tails are flagged by non-stabilization of
/// the median-of-replicates estimate across increasing sample sizes, which is
/// a heuristic and never a proof.
LocalMomentReport check_local_moments(const GradientOracle& oracle, const Problem& problem, MomentRegion region,
                                      MomentOrder order, const PointSampler& sampler, std::uint64_t seed,
                                      const LocalMomentOptions& options = {});

}  // namespace sgdstop
