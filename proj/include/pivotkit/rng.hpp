#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pk {

/// Deterministic RNG with explicitly coded distributions. std:: distribution
/// objects are implementation-defined, so uniform/normal are implemented here
/// to keep datasets and artifacts bit-identical for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed), seed_mix_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection-free modulo is biased for huge n; n here is always small.
    return gen_() % n;
  }

  /// Standard normal via Box-Muller (one value per call; no cached spare,
  /// so the stream layout is position-independent).
  double normal01() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal01(); }

  double clipped_normal(double mean, double stddev, double lo, double hi) {
    return std::min(hi, std::max(lo, normal(mean, stddev)));
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Derives an independent child stream, e.g. one per draw index, so that
  /// parallel workers produce results identical to a sequential run.
  Rng child(std::uint64_t index) const {
    // splitmix64 over (state hash, index)
    std::uint64_t x = seed_mix_ ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return Rng(x);
  }

 private:
  std::mt19937_64 gen_;
  std::uint64_t seed_mix_ = 0;
};

}  // namespace pk
