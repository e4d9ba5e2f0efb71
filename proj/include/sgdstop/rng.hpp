#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace sgdstop {

/// Seeded random stream owned by a single trajectory.
///
/// The engine, the distributions and their cached values are all part of the
/// serializable state, so a stream restored from `state()` continues with
/// exactly the draws the original would have produced.
class RandomStream {
public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t stream_index = 0);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Gamma(shape, 1).
  double gamma(double shape) {
    return gamma_(engine_, std::gamma_distribution<double>::param_type(shape, 1.0));
  }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  std::string state() const;
  static RandomStream from_state(const std::string& state);

  bool operator==(const RandomStream& other) const { return state() == other.state(); }

private:
  RandomStream() = default;

  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::gamma_distribution<double> gamma_{1.0, 1.0};
};

}  // namespace sgdstop
