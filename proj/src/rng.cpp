#include "tidm/rng.hpp"

#include <cmath>
#include <numbers>

namespace tidm {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// 53-bit uniform strictly inside (0, 1).
inline double to_unit(std::uint32_t a, std::uint32_t b) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(a) << 32) | b) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> Rng::philox(std::uint64_t key, std::uint64_t counter) {
  std::array<std::uint32_t, 4> c{static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32), 0u,
                                 0u};
  std::uint32_t k0 = static_cast<std::uint32_t>(key);
  std::uint32_t k1 = static_cast<std::uint32_t>(key >> 32);
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return c;
}

std::array<std::uint32_t, 4> Rng::next_block() { return philox(seed_, counter_++); }

double Rng::uniform() {
  const auto b = next_block();
  return to_unit(b[0], b[1]);
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw ValueError("uniform_int: empty range");
  const auto v = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  return v < n ? v : n - 1;
}

double Rng::normal() {
  const auto b = next_block();
  const double u1 = to_unit(b[0], b[1]);
  const double u2 = to_unit(b[2], b[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <std::floating_point Real>
Tensor<Real> sample_standard_normal(Rng& rng, const Shape& shape) {
  if (shape.empty()) throw ValueError("sample_standard_normal: shape must be nonempty");
  for (int d : shape) {
    if (d < 1) throw ValueError("sample_standard_normal: zero-sized shape " + shape_str(shape));
  }
  Tensor<Real> out(shape);
  for (auto& v : out.data()) v = static_cast<Real>(rng.normal());
  return out;
}

template Tensor<float> sample_standard_normal(Rng&, const Shape&);
template Tensor<double> sample_standard_normal(Rng&, const Shape&);

}  // namespace tidm
