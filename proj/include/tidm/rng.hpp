#pragma once

#include <array>
#include <concepts>
#include <cstdint>

#include "tidm/tensor.hpp"

namespace tidm {

/// Counter-based generator (Philox4x32-10). Draw `k` of a stream is a pure
/// function of (seed, k), so any split of work across threads reproduces the
/// same values as long as each consumer owns its own stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  /// Stream for batch element `index`: seed xor index, counter reset.
  Rng derive(std::uint64_t index) const { return Rng(seed_ ^ index, 0); }

  /// Raw 128-bit block for the current counter; advances by one draw.
  std::array<std::uint32_t, 4> next_block();

  /// Uniform in the open interval (0, 1); one draw.
  double uniform();
  /// Uniform integer in [0, n); one draw.
  std::uint64_t uniform_int(std::uint64_t n);
  /// Standard normal via Box-Muller on one block; one draw.
  double normal();

  static std::array<std::uint32_t, 4> philox(std::uint64_t key, std::uint64_t counter);

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

/// i.i.d. N(0,1) values; advances `rng` by exactly numel(shape) draws.
template <std::floating_point Real>
Tensor<Real> sample_standard_normal(Rng& rng, const Shape& shape);

}  // namespace tidm
