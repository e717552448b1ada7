#pragma once

#include <cmath>
#include <initializer_list>

#include "tidm/autograd.hpp"
#include "tidm/rng.hpp"
#include "tidm/tensor.hpp"

namespace tidm::test {

template <typename Real = float>
Tensor<Real> randn(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<Real> t = sample_standard_normal<Real>(rng, shape);
  for (auto& v : t.data()) v = static_cast<Real>(v * scale);
  return t;
}

template <typename Real>
double max_rel_diff(const Tensor<Real>& a, const Tensor<Real>& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - b[i]);
    worst = std::max(worst, d / std::max({std::abs(static_cast<double>(a[i])), std::abs(static_cast<double>(b[i])), floor}));
  }
  return worst;
}

inline Tensor<float> full(const Shape& shape, float v) { return Tensor<float>(shape, v); }

}  // namespace tidm::test
