#pragma once

// Differentiable operations. Layouts: images are NCHW, token sequences are
// [N, L, D]. Every op validates shapes (ShapeError naming the op and dims)
// and rejects non-finite results (NonFiniteError).

#include <concepts>
#include <span>
#include <vector>

#include "tidm/autograd.hpp"

namespace tidm::ops {

template <std::floating_point Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b);
template <std::floating_point Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b);
template <std::floating_point Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b);
template <std::floating_point Real>
Var<Real> scale(const Var<Real>& a, Real factor);
template <std::floating_point Real>
Var<Real> silu(const Var<Real>& a);
template <std::floating_point Real>
Var<Real> reshape(const Var<Real>& a, Shape shape);

template <std::floating_point Real>
Var<Real> sum(const Var<Real>& a);
template <std::floating_point Real>
Var<Real> mean(const Var<Real>& a);
/// mean((a - b)^2)
template <std::floating_point Real>
Var<Real> mse(const Var<Real>& a, const Var<Real>& b);
/// sum_n w_n * sum_i (pred - target)^2 / numel(pred); one weight per leading index.
template <std::floating_point Real>
Var<Real> weighted_mse(const Var<Real>& pred, const Var<Real>& target, std::span<const Real> weights);
/// Mean softmax cross-entropy of logits [N, C] against class labels.
template <std::floating_point Real>
Var<Real> cross_entropy(const Var<Real>& logits, std::span<const int> labels);

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

/// x [N,Cin,H,W], w [Cout,Cin,k,k], optional bias [Cout].
template <std::floating_point Real>
Var<Real> conv2d(const Var<Real>& x, const Var<Real>& w, const Var<Real>& bias, Conv2dOptions opt = {});

/// x [N, ..., in], w [out, in], optional bias [out] -> [N, ..., out].
template <std::floating_point Real>
Var<Real> linear(const Var<Real>& x, const Var<Real>& w, const Var<Real>& bias);

inline constexpr double kGroupNormEps = 1e-5;

/// Groups whose values are all equal normalise to exactly zero.
template <std::floating_point Real>
Var<Real> group_norm(const Var<Real>& x, const Var<Real>& gamma, const Var<Real>& beta, int groups,
                     Real eps = static_cast<Real>(kGroupNormEps));

/// softmax(q k^T / sqrt(d)) v with q [N,Lq,d], k [N,Lk,d], v [N,Lk,dv].
template <std::floating_point Real>
Var<Real> attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v);

template <std::floating_point Real>
Var<Real> upsample_nearest2x(const Var<Real>& x);

template <std::floating_point Real>
Var<Real> concat_channels(const Var<Real>& a, const Var<Real>& b);

/// [N,C,H,W] -> [N,H*W,C]
template <std::floating_point Real>
Var<Real> to_tokens(const Var<Real>& x);
/// [N,H*W,C] -> [N,C,H,W]
template <std::floating_point Real>
Var<Real> from_tokens(const Var<Real>& t, int height, int width);

/// x [N,C,H,W] + v [N,C] broadcast over space.
template <std::floating_point Real>
Var<Real> add_channel_bias(const Var<Real>& x, const Var<Real>& v);

/// x [N, ...] * mask[n]; the mask is data, not differentiated.
template <std::floating_point Real>
Var<Real> scale_per_sample(const Var<Real>& x, std::span<const Real> mask);

/// Rows of table [V,E] gathered by ids (N*L of them) -> [N,L,E].
template <std::floating_point Real>
Var<Real> embedding(const Var<Real>& table, std::span<const int> ids, int batch, int length);

/// x [N, ...] + y [...] broadcast over the leading axis.
template <std::floating_point Real>
Var<Real> add_broadcast_leading(const Var<Real>& x, const Var<Real>& y);

}  // namespace tidm::ops
