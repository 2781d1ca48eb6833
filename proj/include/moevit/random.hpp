#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>
#include <vector>

namespace moevit {

/// Splittable counter-based generator. Every draw is a pure function of
/// (seed, counter), so state serializes as two integers and independent
/// streams come from split().
class Prng {
 public:
  explicit Prng(uint64_t seed, uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }

  /// Derive an independent stream; drawing from the child never
  /// advances the parent.
  Prng split(uint64_t stream) const {
    return Prng(mix(seed_ ^ mix(stream + 0x9e3779b97f4a7c15ULL)));
  }

  uint64_t next_u64() { return mix(seed_ + (++counter_) * 0x9e3779b97f4a7c15ULL); }

  /// Uniform in [0, 1).
  double uniform() {
    return (double)(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  std::vector<double> normal_vec(size_t n, double stddev = 1.0) {
    std::vector<double> out(n);
    for (auto& v : out) v = normal() * stddev;
    return out;
  }

 private:
  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  uint64_t seed_;
  uint64_t counter_;
};

}  // namespace moevit
