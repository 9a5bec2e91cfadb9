#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace devae {

/// Independent random streams derived from one run seed. Each consumer gets its
/// own stream so that, e.g., adding a metric evaluation never shifts training noise.
enum class Stream : std::uint64_t {
  kInit = 1,
  kBatches = 2,
  kNoise = 3,
  kMetrics = 4,
  kTraversal = 5,
  kPrior = 6,
  kTest = 99,
};

/// Counter-based generator: output n is splitmix64(key + n * golden). The key is a
/// hash of (seed, stream, substream path), so streams can be split without state.
/// Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng() : CounterRng(0) {}
  explicit CounterRng(std::uint64_t seed) : key_(mix(seed)) {}
  CounterRng(std::uint64_t seed, Stream stream)
      : key_(mix(mix(seed) ^ mix(static_cast<std::uint64_t>(stream) + 0x5851f42d4c957f2dULL))) {}

  /// Child generator for `index`; deterministic and independent of this generator's counter.
  CounterRng split(std::uint64_t index) const {
    CounterRng child;
    child.key_ = mix(key_ ^ mix(index + 0x2545f4914f6cdd1dULL));
    return child;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + (++counter_) * kGolden); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double normal() { return normal_(*this); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(*this);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace devae
