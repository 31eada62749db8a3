#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace sepformer {

/// Seeded mt19937_64 stream. The engine is fully specified by the C++
/// standard; the real-valued conversions below are done by hand so streams
/// match across standard libraries.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64";

  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// Uniform integer in [lo, hi].
  int range(int lo, int hi);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal via Box-Muller (one draw per call, no cached spare).
  double normal();

  /// Independent child stream derived from this stream's seed and a label.
  Rng fork(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }
  static std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace sepformer
