// SPDX-License-Identifier: Apache-2.0
#include "satswin/rng.hpp"

#include <cmath>
#include <numbers>

SATSWIN_NAMESPACE_BEGIN

std::uint64_t CounterRng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // Lemire-free rejection on the top of the range keeps this portable.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double CounterRng::normal() {
  // Box-Muller; one draw per call so the counter stays a simple function of call count.
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double CounterRng::truncated_normal(double sigma) {
  for (;;) {
    const double z = normal();
    if (z >= -2.0 && z <= 2.0) return z * sigma;
  }
}

SATSWIN_NAMESPACE_END
