#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace bamifun {

/// Seeded random stream used by every sampler. One instance per chain; not shared across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return std_normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * std_normal_(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  /// Gamma(shape, scale = 1).
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }

  /// Inverse-gamma with density proportional to x^{-shape-1} exp(-rate / x).
  double inverse_gamma(double shape, double rate) { return rate / gamma(shape); }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> std_normal_{0.0, 1.0};
};

/// Seed for an independent chain run on the same data (base XOR index).
constexpr std::uint64_t chain_seed(std::uint64_t base, std::uint64_t index) { return base ^ index; }

/// Seed for one replicate of a simulation study (base + index), stable across partial reruns.
constexpr std::uint64_t replicate_seed(std::uint64_t base, std::uint64_t index) { return base + index; }

}  // namespace bamifun
