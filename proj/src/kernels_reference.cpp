// Serial reference kernels. Straightforward loops, no blocking, no threads.
#include <algorithm>
#include <cmath>
#include <limits>

#include "tidm/kernels.hpp"

namespace tidm::kernels::reference {

template <std::floating_point Real>
std::vector<Real> conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                                 std::span<const Real> b) {
  const int ho = g.out_height(), wo = g.out_width();
  std::vector<Real> y(static_cast<std::size_t>(g.batch) * g.out_channels * ho * wo);
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          Real acc = b.empty() ? Real{0} : b[co];
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride - g.padding + ky;
                const int ix = ox * g.stride - g.padding + kx;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                acc += w[((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx] *
                       x[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.height + iy) * g.width + ix];
              }
          y[((static_cast<std::size_t>(n) * g.out_channels + co) * ho + oy) * wo + ox] = acc;
        }
  return y;
}

template <std::floating_point Real>
ConvGrads<Real> conv2d_backward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                                std::span<const Real> dy, bool need_dx, bool need_db) {
  const int ho = g.out_height(), wo = g.out_width();
  ConvGrads<Real> out;
  out.dw.assign(w.size(), Real{0});
  if (need_dx) out.dx.assign(x.size(), Real{0});
  if (need_db) out.db.assign(static_cast<std::size_t>(g.out_channels), Real{0});
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const Real d = dy[((static_cast<std::size_t>(n) * g.out_channels + co) * ho + oy) * wo + ox];
          if (need_db) out.db[co] += d;
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride - g.padding + ky;
                const int ix = ox * g.stride - g.padding + kx;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                const std::size_t wi = ((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx;
                const std::size_t xi = ((static_cast<std::size_t>(n) * g.in_channels + ci) * g.height + iy) * g.width + ix;
                out.dw[wi] += d * x[xi];
                if (need_dx) out.dx[xi] += d * w[wi];
              }
        }
  return out;
}

template <std::floating_point Real>
std::vector<Real> linear_forward(const LinearGeometry& g, std::span<const Real> x, std::span<const Real> w,
                                 std::span<const Real> b) {
  const std::size_t m = static_cast<std::size_t>(g.batch) * g.rows;
  std::vector<Real> y(m * g.out_features);
  for (std::size_t r = 0; r < m; ++r)
    for (int o = 0; o < g.out_features; ++o) {
      Real acc = b.empty() ? Real{0} : b[o];
      for (int i = 0; i < g.in_features; ++i) acc += x[r * g.in_features + i] * w[o * g.in_features + i];
      y[r * g.out_features + o] = acc;
    }
  return y;
}

template <std::floating_point Real>
LinearGrads<Real> linear_backward(const LinearGeometry& g, std::span<const Real> x, std::span<const Real> w,
                                  std::span<const Real> dy, bool need_dx, bool need_db) {
  const std::size_t m = static_cast<std::size_t>(g.batch) * g.rows;
  LinearGrads<Real> out;
  out.dw.assign(w.size(), Real{0});
  if (need_dx) out.dx.assign(x.size(), Real{0});
  if (need_db) out.db.assign(static_cast<std::size_t>(g.out_features), Real{0});
  for (std::size_t r = 0; r < m; ++r)
    for (int o = 0; o < g.out_features; ++o) {
      const Real d = dy[r * g.out_features + o];
      if (need_db) out.db[o] += d;
      for (int i = 0; i < g.in_features; ++i) {
        out.dw[o * g.in_features + i] += d * x[r * g.in_features + i];
        if (need_dx) out.dx[r * g.in_features + i] += d * w[o * g.in_features + i];
      }
    }
  return out;
}

template <std::floating_point Real>
NormForward<Real> group_norm_forward(const NormGeometry& g, std::span<const Real> x, std::span<const Real> gamma,
                                     std::span<const Real> beta, Real eps) {
  const int cpg = g.channels / g.groups;
  const std::size_t group_size = static_cast<std::size_t>(cpg) * g.spatial;
  NormForward<Real> out;
  out.y.resize(x.size());
  out.mean.resize(static_cast<std::size_t>(g.batch) * g.groups);
  out.rstd.resize(out.mean.size());
  for (int n = 0; n < g.batch; ++n)
    for (int gr = 0; gr < g.groups; ++gr) {
      const std::size_t base = (static_cast<std::size_t>(n) * g.channels + gr * cpg) * g.spatial;
      Real sum = 0;
      Real lo = x[base], hi = x[base];
      for (std::size_t i = 0; i < group_size; ++i) {
        sum += x[base + i];
        lo = std::min(lo, x[base + i]);
        hi = std::max(hi, x[base + i]);
      }
      const Real mean = sum / static_cast<Real>(group_size);
      Real var = 0;
      for (std::size_t i = 0; i < group_size; ++i) var += (x[base + i] - mean) * (x[base + i] - mean);
      var /= static_cast<Real>(group_size);
      const bool flat = lo == hi;
      const Real rstd = Real{1} / std::sqrt(var + eps);
      out.mean[n * g.groups + gr] = mean;
      out.rstd[n * g.groups + gr] = rstd;
      for (int c = 0; c < cpg; ++c) {
        const int ch = gr * cpg + c;
        for (int s = 0; s < g.spatial; ++s) {
          const std::size_t i = base + static_cast<std::size_t>(c) * g.spatial + s;
          const Real normalized = flat ? Real{0} : (x[i] - mean) * rstd;
          out.y[i] = normalized * gamma[ch] + beta[ch];
        }
      }
    }
  return out;
}

template <std::floating_point Real>
NormGrads<Real> group_norm_backward(const NormGeometry& g, std::span<const Real> x, std::span<const Real> gamma,
                                    const NormForward<Real>& fwd, std::span<const Real> dy) {
  const int cpg = g.channels / g.groups;
  const std::size_t group_size = static_cast<std::size_t>(cpg) * g.spatial;
  NormGrads<Real> out;
  out.dx.assign(x.size(), Real{0});
  out.dgamma.assign(static_cast<std::size_t>(g.channels), Real{0});
  out.dbeta.assign(static_cast<std::size_t>(g.channels), Real{0});
  for (int n = 0; n < g.batch; ++n)
    for (int gr = 0; gr < g.groups; ++gr) {
      const std::size_t base = (static_cast<std::size_t>(n) * g.channels + gr * cpg) * g.spatial;
      const Real mean = fwd.mean[n * g.groups + gr];
      const Real rstd = fwd.rstd[n * g.groups + gr];
      Real sum_dxhat = 0, sum_dxhat_xhat = 0;
      for (int c = 0; c < cpg; ++c) {
        const int ch = gr * cpg + c;
        for (int s = 0; s < g.spatial; ++s) {
          const std::size_t i = base + static_cast<std::size_t>(c) * g.spatial + s;
          const Real xhat = (x[i] - mean) * rstd;
          out.dgamma[ch] += dy[i] * xhat;
          out.dbeta[ch] += dy[i];
          const Real dxhat = dy[i] * gamma[ch];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
      }
      const Real inv_n = Real{1} / static_cast<Real>(group_size);
      for (int c = 0; c < cpg; ++c) {
        const int ch = gr * cpg + c;
        for (int s = 0; s < g.spatial; ++s) {
          const std::size_t i = base + static_cast<std::size_t>(c) * g.spatial + s;
          const Real xhat = (x[i] - mean) * rstd;
          const Real dxhat = dy[i] * gamma[ch];
          out.dx[i] = rstd * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
        }
      }
    }
  return out;
}

template <std::floating_point Real>
AttentionForward<Real> attention_forward(const AttentionGeometry& g, std::span<const Real> q, std::span<const Real> k,
                                         std::span<const Real> v) {
  AttentionForward<Real> out;
  out.out.assign(static_cast<std::size_t>(g.batch) * g.queries * g.value_dim, Real{0});
  out.probs.resize(static_cast<std::size_t>(g.batch) * g.queries * g.keys);
  const Real scale = Real{1} / std::sqrt(static_cast<Real>(g.dim));
  for (int n = 0; n < g.batch; ++n)
    for (int i = 0; i < g.queries; ++i) {
      Real* p = &out.probs[(static_cast<std::size_t>(n) * g.queries + i) * g.keys];
      Real mx = -std::numeric_limits<Real>::infinity();
      for (int j = 0; j < g.keys; ++j) {
        Real s = 0;
        for (int d = 0; d < g.dim; ++d)
          s += q[(static_cast<std::size_t>(n) * g.queries + i) * g.dim + d] *
               k[(static_cast<std::size_t>(n) * g.keys + j) * g.dim + d];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      Real z = 0;
      for (int j = 0; j < g.keys; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      for (int j = 0; j < g.keys; ++j) p[j] /= z;
      for (int j = 0; j < g.keys; ++j)
        for (int d = 0; d < g.value_dim; ++d)
          out.out[(static_cast<std::size_t>(n) * g.queries + i) * g.value_dim + d] +=
              p[j] * v[(static_cast<std::size_t>(n) * g.keys + j) * g.value_dim + d];
    }
  return out;
}

template <std::floating_point Real>
AttentionGrads<Real> attention_backward(const AttentionGeometry& g, std::span<const Real> q, std::span<const Real> k,
                                        std::span<const Real> v, std::span<const Real> probs,
                                        std::span<const Real> dout) {
  AttentionGrads<Real> out;
  out.dq.assign(q.size(), Real{0});
  out.dk.assign(k.size(), Real{0});
  out.dv.assign(v.size(), Real{0});
  const Real scale = Real{1} / std::sqrt(static_cast<Real>(g.dim));
  std::vector<Real> dp(static_cast<std::size_t>(g.keys));
  for (int n = 0; n < g.batch; ++n)
    for (int i = 0; i < g.queries; ++i) {
      const Real* p = &probs[(static_cast<std::size_t>(n) * g.queries + i) * g.keys];
      const Real* go = &dout[(static_cast<std::size_t>(n) * g.queries + i) * g.value_dim];
      Real dot = 0;
      for (int j = 0; j < g.keys; ++j) {
        Real s = 0;
        for (int d = 0; d < g.value_dim; ++d) {
          s += go[d] * v[(static_cast<std::size_t>(n) * g.keys + j) * g.value_dim + d];
          out.dv[(static_cast<std::size_t>(n) * g.keys + j) * g.value_dim + d] += p[j] * go[d];
        }
        dp[j] = s;
        dot += s * p[j];
      }
      for (int j = 0; j < g.keys; ++j) {
        const Real ds = p[j] * (dp[j] - dot) * scale;
        for (int d = 0; d < g.dim; ++d) {
          out.dq[(static_cast<std::size_t>(n) * g.queries + i) * g.dim + d] +=
              ds * k[(static_cast<std::size_t>(n) * g.keys + j) * g.dim + d];
          out.dk[(static_cast<std::size_t>(n) * g.keys + j) * g.dim + d] +=
              ds * q[(static_cast<std::size_t>(n) * g.queries + i) * g.dim + d];
        }
      }
    }
  return out;
}

#define TIDM_INSTANTIATE(R)                                                                                        \
  template std::vector<R> conv2d_forward(const ConvGeometry&, std::span<const R>, std::span<const R>,              \
                                         std::span<const R>);                                                      \
  template ConvGrads<R> conv2d_backward(const ConvGeometry&, std::span<const R>, std::span<const R>,               \
                                        std::span<const R>, bool, bool);                                           \
  template std::vector<R> linear_forward(const LinearGeometry&, std::span<const R>, std::span<const R>,            \
                                         std::span<const R>);                                                      \
  template LinearGrads<R> linear_backward(const LinearGeometry&, std::span<const R>, std::span<const R>,           \
                                          std::span<const R>, bool, bool);                                         \
  template NormForward<R> group_norm_forward(const NormGeometry&, std::span<const R>, std::span<const R>,          \
                                             std::span<const R>, R);                                               \
  template NormGrads<R> group_norm_backward(const NormGeometry&, std::span<const R>, std::span<const R>,           \
                                            const NormForward<R>&, std::span<const R>);                            \
  template AttentionForward<R> attention_forward(const AttentionGeometry&, std::span<const R>, std::span<const R>, \
                                                 std::span<const R>);                                              \
  template AttentionGrads<R> attention_backward(const AttentionGeometry&, std::span<const R>, std::span<const R>,  \
                                                std::span<const R>, std::span<const R>, std::span<const R>);

TIDM_INSTANTIATE(float)
TIDM_INSTANTIATE(double)

}  // namespace tidm::kernels::reference
