#pragma once

#include <cstdint>

namespace histoad {

/// Counter-based generator: output n is SplitMix64(key + n * golden_gamma).
/// The whole state is (key, counter), so it can be copied, threaded through
/// calls, and split into independent streams by hashing a stream id into a
/// fresh key.
class CounterRng {
 public:
  CounterRng() = default;
  explicit CounterRng(std::uint64_t seed) : key_(mix(seed)) {}

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in (0, 1].
  double uniform_open_low();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (cosine branch only, two draws per call).
  double normal();

  /// Independent child stream; does not advance this generator.
  CounterRng split(std::uint64_t stream_id) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  friend bool operator==(const CounterRng&, const CounterRng&) = default;

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t key_ = 0x853c49e6748fea9bULL;
  std::uint64_t counter_ = 0;
};

}  // namespace histoad
