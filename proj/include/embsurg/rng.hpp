#pragma once

// Self-contained deterministic RNG (xoshiro256++ seeded via splitmix64).
// All distributions are implemented here rather than via <random> so that a
// given seed produces the same stream on every standard library.

#include "embsurg/core.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>

namespace embsurg {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) {
      x += 0x9e3779b97f4a7c15ull;
      word = mix64(x);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller. No cached spare: two uniforms per draw
  // keeps the stream position independent of call history.
  double normal() {
    const double u1 =
        (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  template <class T>
  void fill_normal(Mat<T>& m, double stddev = 1.0, double mean = 0.0) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = static_cast<T>(mean + stddev * normal());
    }
  }

  template <class T>
  Mat<T> normal_matrix(Eigen::Index rows, Eigen::Index cols,
                       double stddev = 1.0) {
    Mat<T> m(rows, cols);
    fill_normal(m, stddev);
    return m;
  }

  // Uniform draw inside the Euclidean ball of the given radius: isotropic
  // direction scaled by radius * U^(1/d).
  template <class T>
  Vec<T> in_ball(Eigen::Index dim, double radius) {
    Vec<T> dir(dim);
    double norm_sq = 0.0;
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double g = normal();
      dir[i] = static_cast<T>(g);
      norm_sq += g * g;
    }
    if (radius <= 0.0 || norm_sq == 0.0) return Vec<T>::Zero(dim);
    const double r =
        radius * std::pow(uniform01(), 1.0 / static_cast<double>(dim));
    return dir * static_cast<T>(r / std::sqrt(norm_sq));
  }

  template <class It>
  void shuffle(It begin, It end) {
    const auto n = static_cast<std::uint64_t>(end - begin);
    for (std::uint64_t i = n; i > 1; --i) {
      const std::uint64_t j = below(i);
      std::swap(begin[static_cast<std::ptrdiff_t>(i - 1)],
                begin[static_cast<std::ptrdiff_t>(j)]);
    }
  }

  // k distinct indices from [0, n), in shuffled order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    // Partial Fisher-Yates: the first k slots end up uniformly chosen.
    for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
};

}  // namespace embsurg
