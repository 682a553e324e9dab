#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "kronfisher/tensor.hpp"

namespace kronfisher {

// SplitMix64 (Steele, Lea & Flood 2014): a Weyl counter advanced by
// 0x9E3779B97F4A7C15 and finalized with the two multiply-xorshift rounds below.
// Pure integer arithmetic, so a seed produces the same stream everywhere.
class SeededRng {
 public:
  static constexpr std::uint64_t kIncrement = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kMix1 = 0xBF58476D1CE4E5B9ULL;
  static constexpr std::uint64_t kMix2 = 0x94D049BB133111EBULL;

  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += kIncrement);
    z = (z ^ (z >> 30)) * kMix1;
    z = (z ^ (z >> 27)) * kMix2;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ValidationError("below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do x = next_u64();
    while (x >= limit);
    return x % n;
  }

  // Standard normal via the Box-Muller transform; the second variate of each
  // pair is cached and returned by the next call.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derives an independent stream for a sub-task (epoch, worker, ...).
  SeededRng fork(std::uint64_t salt) const {
    SeededRng mixer(seed_ ^ (salt * kMix1 + kIncrement));
    return SeededRng(mixer.next_u64());
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Tensor gaussian_fill(SeededRng& rng, Shape shape, double mean, double stddev) {
  if (stddev < 0.0) throw ValidationError("gaussian_fill: negative std");
  Tensor out(std::move(shape), mean);
  if (stddev == 0.0) return out;
  for (double& v : out.data()) v = rng.normal(mean, stddev);
  return out;
}

inline Tensor uniform_fill(SeededRng& rng, Shape shape, double lo, double hi) {
  Tensor out(std::move(shape));
  for (double& v : out.data()) v = rng.uniform(lo, hi);
  return out;
}

// Fisher-Yates permutation of 0..n-1 drawn from `rng`.
inline std::vector<std::size_t> permutation(SeededRng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

}  // namespace kronfisher
