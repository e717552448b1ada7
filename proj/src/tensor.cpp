#include "tidm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tidm {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <std::floating_point Real>
Tensor<Real>::Tensor(Shape shape, Real fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

template <std::floating_point Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " needs " + std::to_string(numel(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

template <std::floating_point Real>
int Tensor<Real>::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

template <std::floating_point Real>
Real Tensor<Real>::item() const {
  if (data_.size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape_) + " is not a scalar");
  return data_[0];
}

template <std::floating_point Real>
Tensor<Real> Tensor<Real>::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <std::floating_point Real>
Tensor<Real> Tensor<Real>::slice0(int i) const {
  if (rank() == 0 || i < 0 || i >= shape_[0]) {
    throw ShapeError("slice0: index " + std::to_string(i) + " out of range for " + shape_str(shape_));
  }
  Shape inner(shape_.begin() + 1, shape_.end());
  const std::size_t n = numel(inner);
  std::vector<Real> out(data_.begin() + static_cast<std::ptrdiff_t>(i * n),
                        data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
  return Tensor(std::move(inner), std::move(out));
}

template <std::floating_point Real>
bool Tensor<Real>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

template <std::floating_point Real>
void require_finite(const Tensor<Real>& t, std::string_view op) {
  if (!t.all_finite()) {
    throw NonFiniteError(std::string(op) + ": produced non-finite values (shape " + shape_str(t.shape()) + ")");
  }
}

template <std::floating_point Real>
Tensor<Real> stack(std::span<const Tensor<Real>> items) {
  if (items.empty()) throw ShapeError("stack: no tensors");
  const Shape& inner = items[0].shape();
  std::vector<Real> out;
  out.reserve(items.size() * items[0].size());
  for (const auto& t : items) {
    if (t.shape() != inner) {
      throw ShapeError("stack: mismatched shapes " + shape_str(inner) + " vs " + shape_str(t.shape()));
    }
    out.insert(out.end(), t.vec().begin(), t.vec().end());
  }
  Shape shape{static_cast<int>(items.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return Tensor<Real>(std::move(shape), std::move(out));
}

template <std::floating_point Real>
Real max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template void require_finite(const Tensor<float>&, std::string_view);
template void require_finite(const Tensor<double>&, std::string_view);
template Tensor<float> stack(std::span<const Tensor<float>>);
template Tensor<double> stack(std::span<const Tensor<double>>);
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace tidm
