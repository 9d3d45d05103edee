// SPDX-License-Identifier: Apache-2.0
#include "dfilm/rng.hpp"

#include <cmath>
#include <numbers>

namespace dfilm {

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  // Rejection on the top of the range keeps every residue equally likely.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::uint64_t salt) noexcept {
  Rng mixer(state_ ^ (salt * 0xD1B54A32D192ED03ULL));
  mixer.next_u64();
  return Rng(mixer.next_u64());
}

}  // namespace dfilm
