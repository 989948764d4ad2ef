#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace cbseq {

/// Deterministic counter-based random stream (splitmix64 over a
/// seed/counter pair). Every stochastic component of the pipeline draws
/// from one of these; no global RNG state exists anywhere, so runs are
/// reproducible bit-for-bit regardless of evaluation order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Independent substream for a tagged purpose. Streams derived with
  /// distinct tags never overlap in practice (full 64-bit mixing).
  Rng substream(std::uint64_t tag) const {
    return Rng(mix(state_ ^ 0x9e3779b97f4a7c15ull, tag));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_, 0);
  }

  /// Uniform in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    std::uint64_t threshold = -n % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Uniform double in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  /// Standard normal via Box-Muller (not std::normal_distribution,
  /// whose output is implementation-defined).
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 1e-12) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) {
    return mean + stddev * normal();
  }

  double lognormal(double mu, double sigma) {
    return std::exp(normal(mu, sigma));
  }

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = next_below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace cbseq
