#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace densemp {

/// SplitMix64 finalizer. Used to derive per-task seeds from a root seed.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for task number `counter` of stream `stream` under `root`. Every sampling site in the
/// pipeline derives its seed this way, so results never depend on evaluation order.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream, std::uint64_t counter = 0) noexcept {
  return mix64(mix64(root ^ mix64(stream)) + counter);
}

/// Deterministic generator. The engine is std::mt19937_64 (fully specified by the standard);
/// the distributions are implemented here because the standard library's are not portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo == hi ? lo : lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (no cached second value, so draws stay stateless).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

// Stream identifiers for derive_seed.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kStage1Batch = 2;
inline constexpr std::uint64_t kStage1Views = 3;
inline constexpr std::uint64_t kStage2 = 4;
inline constexpr std::uint64_t kFinetune = 5;
inline constexpr std::uint64_t kEvaluate = 6;
inline constexpr std::uint64_t kSynthetic = 7;
inline constexpr std::uint64_t kEpisodeTransform = 8;
}  // namespace streams

}  // namespace densemp
