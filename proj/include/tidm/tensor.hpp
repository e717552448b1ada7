#pragma once

#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tidm/error.hpp"

namespace tidm {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array. A scalar has the empty shape and one element.
template <std::floating_point Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() : data_(1, Real{0}) {}
  explicit Tensor(Shape shape, Real fill = Real{0});
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor scalar(Real value) { return Tensor(Shape{}, std::vector<Real>{value}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const { return data_.size(); }

  std::span<const Real> data() const { return data_; }
  std::span<Real> data() { return data_; }
  const std::vector<Real>& vec() const { return data_; }

  Real operator[](std::size_t i) const { return data_[i]; }
  Real& operator[](std::size_t i) { return data_[i]; }

  /// Value of a one-element tensor.
  Real item() const;

  Tensor reshaped(Shape shape) const;

  /// Copy of the sub-tensor at index `i` of the leading axis.
  Tensor slice0(int i) const;

  template <std::floating_point Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

/// Throws NonFiniteError naming `op` when `t` holds NaN or Inf.
template <std::floating_point Real>
void require_finite(const Tensor<Real>& t, std::string_view op);

/// Stacks equally shaped tensors along a new leading axis.
template <std::floating_point Real>
Tensor<Real> stack(std::span<const Tensor<Real>> items);

template <std::floating_point Real>
Real max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b);

}  // namespace tidm
