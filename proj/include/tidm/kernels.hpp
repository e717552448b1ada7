#pragma once

// Raw compute kernels behind the differentiable ops.
//
// Two implementations share one interface:
//   tidm::kernels            OpenMP over batch elements, Eigen products per element
//   tidm::kernels::reference plain serial loops, kept as the test oracle
//
// Every parallel kernel splits work only along the batch axis and reduces
// weight gradients in a fixed order, so results are bitwise independent of
// the thread count and element i of a batch does not depend on the others.

#include <concepts>
#include <span>
#include <vector>

namespace tidm::kernels {

struct ConvGeometry {
  int batch = 1;
  int in_channels = 1;
  int height = 1;
  int width = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int padding = 0;

  int out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  int patch() const { return in_channels * kernel * kernel; }
};

/// Rows of a linear layer grouped per batch element: x is [batch*rows, in].
struct LinearGeometry {
  int batch = 1;
  int rows = 1;
  int in_features = 1;
  int out_features = 1;
};

struct NormGeometry {
  int batch = 1;
  int channels = 1;
  int spatial = 1;
  int groups = 1;
};

struct AttentionGeometry {
  int batch = 1;
  int queries = 1;
  int keys = 1;
  int dim = 1;
  int value_dim = 1;
};

template <std::floating_point Real>
struct ConvGrads {
  std::vector<Real> dx;
  std::vector<Real> dw;
  std::vector<Real> db;
};

template <std::floating_point Real>
struct LinearGrads {
  std::vector<Real> dx;
  std::vector<Real> dw;
  std::vector<Real> db;
};

template <std::floating_point Real>
struct NormForward {
  std::vector<Real> y;
  std::vector<Real> mean;  // [batch*groups]
  std::vector<Real> rstd;  // [batch*groups]
};

template <std::floating_point Real>
struct NormGrads {
  std::vector<Real> dx;
  std::vector<Real> dgamma;
  std::vector<Real> dbeta;
};

template <std::floating_point Real>
struct AttentionForward {
  std::vector<Real> out;
  std::vector<Real> probs;  // [batch, queries, keys]
};

template <std::floating_point Real>
struct AttentionGrads {
  std::vector<Real> dq;
  std::vector<Real> dk;
  std::vector<Real> dv;
};

#define TIDM_KERNEL_DECLS                                                                                            \
  template <std::floating_point Real>                                                                                \
  std::vector<Real> conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,          \
                                   std::span<const Real> b);                                                         \
  template <std::floating_point Real>                                                                                \
  ConvGrads<Real> conv2d_backward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,           \
                                  std::span<const Real> dy, bool need_dx, bool need_db);                             \
  template <std::floating_point Real>                                                                                \
  std::vector<Real> linear_forward(const LinearGeometry& g, std::span<const Real> x, std::span<const Real> w,        \
                                   std::span<const Real> b);                                                         \
  template <std::floating_point Real>                                                                                \
  LinearGrads<Real> linear_backward(const LinearGeometry& g, std::span<const Real> x, std::span<const Real> w,       \
                                    std::span<const Real> dy, bool need_dx, bool need_db);                           \
  template <std::floating_point Real>                                                                                \
  NormForward<Real> group_norm_forward(const NormGeometry& g, std::span<const Real> x, std::span<const Real> gamma,   \
                                       std::span<const Real> beta, Real eps);                                        \
  template <std::floating_point Real>                                                                                \
  NormGrads<Real> group_norm_backward(const NormGeometry& g, std::span<const Real> x, std::span<const Real> gamma,    \
                                      const NormForward<Real>& fwd, std::span<const Real> dy);                       \
  template <std::floating_point Real>                                                                                \
  AttentionForward<Real> attention_forward(const AttentionGeometry& g, std::span<const Real> q,                      \
                                           std::span<const Real> k, std::span<const Real> v);                        \
  template <std::floating_point Real>                                                                                \
  AttentionGrads<Real> attention_backward(const AttentionGeometry& g, std::span<const Real> q,                       \
                                          std::span<const Real> k, std::span<const Real> v,                          \
                                          std::span<const Real> probs, std::span<const Real> dout);

TIDM_KERNEL_DECLS

namespace reference {
TIDM_KERNEL_DECLS
}  // namespace reference

#undef TIDM_KERNEL_DECLS

/// Number of OpenMP threads the parallel kernels may use.
int max_threads();

}  // namespace tidm::kernels
