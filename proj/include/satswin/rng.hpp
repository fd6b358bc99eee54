// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "satswin/tensor.hpp"

SATSWIN_NAMESPACE_BEGIN

/// SplitMix64 finalizer; a strong 64-bit bijective mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: the i-th draw is a pure function of (key, i), so
/// streams are reproducible regardless of thread count or call interleaving.
/// split() derives an independent child stream from a numeric label.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(mix64(seed ^ 0x5A7C0FFEE0DDF00DULL)) {}

  CounterRng split(std::uint64_t label) const {
    CounterRng child(0);
    child.key_ = mix64(key_ ^ mix64(label + 0xD1B54A32D192ED03ULL));
    return child;
  }
  CounterRng split(std::uint64_t a, std::uint64_t b) const { return split(a).split(b); }

  std::uint64_t at(std::uint64_t counter) const {
    return mix64(key_ + counter * 0xA0761D6478BD642FULL);
  }
  std::uint64_t next_u64() { return at(counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  /// Normal(0, sigma) truncated to [-2 sigma, 2 sigma] by rejection.
  double truncated_normal(double sigma);

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

SATSWIN_NAMESPACE_END
