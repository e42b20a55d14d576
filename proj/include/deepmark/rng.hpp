#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace deepmark {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded random source. std::mt19937_64 output is fully specified by the
/// standard; the distribution transforms are implemented here by hand so that
/// streams are reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t bits() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) { return gen_() % n; }

  /// Standard normal via Box-Muller; consumes two uniform draws per call.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  bool coin() { return (gen_() & 1ULL) != 0; }

  /// Independent child stream; (seed, tag) -> child seed is a fixed hash.
  Rng fork(std::uint64_t tag) const { return Rng(splitmix64(seed_ ^ splitmix64(tag))); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace deepmark
