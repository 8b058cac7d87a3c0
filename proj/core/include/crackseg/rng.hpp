#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace crackseg {

/// Deterministic random stream. Wraps mt19937_64 but derives all
/// distributions by hand so that results are identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    // modulo bias is irrelevant for the tiny n used here, but rejection
    // sampling keeps the stream well defined for any n
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  /// Normal truncated to [-2, 2] standard deviations, by resampling.
  double truncated_normal() {
    double z = normal();
    while (z < -2.0 || z > 2.0) z = normal();
    return z;
  }

  /// Derive an independent stream from (this seed, a, b). Used to give each
  /// (epoch, sample) pair its own augmentation stream.
  static Rng fork(uint64_t seed, uint64_t a, uint64_t b = 0) {
    uint64_t h = seed;
    h = mix(h ^ (a + 0x9e3779b97f4a7c15ull));
    h = mix(h ^ (b + 0x9e3779b97f4a7c15ull));
    return Rng(h);
  }

 private:
  static uint64_t mix(uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace crackseg
