#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mdprod {

/// SplitMix64 finalizer; used to derive independent substream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed for substream `index` of `master`. Stable across platforms.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Portable random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The distributions are implemented here rather than taken from
/// <random> because the standard library distributions are allowed to differ
/// between implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n) by rejection; n > 0.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via the Marsaglia polar method.
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mdprod
