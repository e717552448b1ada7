// OpenMP kernels. Work is split along the batch axis only; each element runs
// single-threaded Eigen products on buffers whose sizes do not depend on the
// batch size, and weight gradients are summed over elements in index order.
#include "tidm/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tidm::kernels {

namespace {

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MapMat = Eigen::Map<RowMat<Real>>;
template <class Real>
using CMapMat = Eigen::Map<const RowMat<Real>>;

template <class Real>
void im2col(const ConvGeometry& g, const Real* x, Real* cols) {
  const int ho = g.out_height(), wo = g.out_width();
  for (int ci = 0; ci < g.in_channels; ++ci)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        Real* row = cols + static_cast<std::size_t>((ci * g.kernel + ky) * g.kernel + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            row[oy * wo + ox] = (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width)
                                    ? Real{0}
                                    : x[(static_cast<std::size_t>(ci) * g.height + iy) * g.width + ix];
          }
        }
      }
}

template <class Real>
void col2im(const ConvGeometry& g, const Real* cols, Real* dx) {
  const int ho = g.out_height(), wo = g.out_width();
  for (int ci = 0; ci < g.in_channels; ++ci)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const Real* row = cols + static_cast<std::size_t>((ci * g.kernel + ky) * g.kernel + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix < 0 || ix >= g.width) continue;
            dx[(static_cast<std::size_t>(ci) * g.height + iy) * g.width + ix] += row[oy * wo + ox];
          }
        }
      }
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

// Sums per-element partials [batch][len] into out in element order.
template <class Real>
void ordered_sum(const std::vector<Real>& partials, int batch, std::size_t len, std::vector<Real>& out) {
  out.assign(len, Real{0});
  for (int n = 0; n < batch; ++n) {
    const Real* p = partials.data() + static_cast<std::size_t>(n) * len;
    for (std::size_t i = 0; i < len; ++i) out[i] += p[i];
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <std::floating_point Real>
std::vector<Real> conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                                 std::span<const Real> b) {
  const int hw_out = g.out_height() * g.out_width();
  const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.height * g.width;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * hw_out;
  std::vector<Real> y(static_cast<std::size_t>(g.batch) * out_stride);
  const CMapMat<Real> wm(w.data(), g.out_channels, g.patch());
#pragma omp parallel
  {
    std::vector<Real> cols(static_cast<std::size_t>(g.patch()) * hw_out);
#pragma omp for schedule(static)
    for (int n = 0; n < g.batch; ++n) {
      if (is_pointwise(g)) {
        std::copy_n(x.data() + n * in_stride, in_stride, cols.data());
      } else {
        im2col(g, x.data() + n * in_stride, cols.data());
      }
      const CMapMat<Real> cm(cols.data(), g.patch(), hw_out);
      MapMat<Real> ym(y.data() + n * out_stride, g.out_channels, hw_out);
      ym.noalias() = wm * cm;
      if (!b.empty()) {
        for (int co = 0; co < g.out_channels; ++co) ym.row(co).array() += b[co];
      }
    }
  }
  return y;
}

template <std::floating_point Real>
ConvGrads<Real> conv2d_backward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                                std::span<const Real> dy, bool need_dx, bool need_db) {
  const int hw_out = g.out_height() * g.out_width();
  const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.height * g.width;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * hw_out;
  const std::size_t wlen = w.size();
  ConvGrads<Real> out;
  if (need_dx) out.dx.assign(x.size(), Real{0});
  std::vector<Real> dw_partial(static_cast<std::size_t>(g.batch) * wlen);
  const CMapMat<Real> wm(w.data(), g.out_channels, g.patch());
#pragma omp parallel
  {
    std::vector<Real> cols(static_cast<std::size_t>(g.patch()) * hw_out);
    std::vector<Real> dcols(need_dx ? cols.size() : 0);
#pragma omp for schedule(static)
    for (int n = 0; n < g.batch; ++n) {
      if (is_pointwise(g)) {
        std::copy_n(x.data() + n * in_stride, in_stride, cols.data());
      } else {
        im2col(g, x.data() + n * in_stride, cols.data());
      }
      const CMapMat<Real> cm(cols.data(), g.patch(), hw_out);
      const CMapMat<Real> dym(dy.data() + n * out_stride, g.out_channels, hw_out);
      MapMat<Real> dwm(dw_partial.data() + n * wlen, g.out_channels, g.patch());
      dwm.noalias() = dym * cm.transpose();
      if (need_dx) {
        MapMat<Real> dcm(dcols.data(), g.patch(), hw_out);
        dcm.noalias() = wm.transpose() * dym;
        if (is_pointwise(g)) {
          std::copy_n(dcols.data(), in_stride, out.dx.data() + n * in_stride);
        } else {
          col2im(g, dcols.data(), out.dx.data() + n * in_stride);
        }
      }
    }
  }
  ordered_sum(dw_partial, g.batch, wlen, out.dw);
  if (need_db) {
    out.db.assign(static_cast<std::size_t>(g.out_channels), Real{0});
    for (int n = 0; n < g.batch; ++n)
      for (int co = 0; co < g.out_channels; ++co) {
        const Real* row = dy.data() + n * out_stride + static_cast<std::size_t>(co) * hw_out;
        Real s = 0;
        for (int i = 0; i < hw_out; ++i) s += row[i];
        out.db[co] += s;
      }
  }
  return out;
}

template <std::floating_point Real>
std::vector<Real> linear_forward(const LinearGeometry& g, std::span<const Real> x, std::span<const Real> w,
                                 std::span<const Real> b) {
  const std::size_t in_stride = static_cast<std::size_t>(g.rows) * g.in_features;
  const std::size_t out_stride = static_cast<std::size_t>(g.rows) * g.out_features;
  std::vector<Real> y(static_cast<std::size_t>(g.batch) * out_stride);
  const CMapMat<Real> wm(w.data(), g.out_features, g.in_features);
#pragma omp parallel
  {
    std::vector<Real> xin(in_stride);
#pragma omp for schedule(static)
    for (int n = 0; n < g.batch; ++n) {
      // Private copy keeps operand alignment identical for every element.
      std::copy_n(x.data() + n * in_stride, in_stride, xin.data());
      const CMapMat<Real> xm(xin.data(), g.rows, g.in_features);
      MapMat<Real> ym(y.data() + n * out_stride, g.rows, g.out_features);
      ym.noalias() = xm * wm.transpose();
      if (!b.empty()) {
        for (int r = 0; r < g.rows; ++r)
          for (int o = 0; o < g.out_features; ++o) ym(r, o) += b[o];
      }
    }
  }
  return y;
}

template <std::floating_point Real>
LinearGrads<Real> linear_backward(const LinearGeometry& g, std::span<const Real> x, std::span<const Real> w,
                                  std::span<const Real> dy, bool need_dx, bool need_db) {
  const std::size_t in_stride = static_cast<std::size_t>(g.rows) * g.in_features;
  const std::size_t out_stride = static_cast<std::size_t>(g.rows) * g.out_features;
  const std::size_t wlen = w.size();
  LinearGrads<Real> out;
  if (need_dx) out.dx.assign(x.size(), Real{0});
  std::vector<Real> dw_partial(static_cast<std::size_t>(g.batch) * wlen);
  const CMapMat<Real> wm(w.data(), g.out_features, g.in_features);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    const CMapMat<Real> xm(x.data() + n * in_stride, g.rows, g.in_features);
    const CMapMat<Real> dym(dy.data() + n * out_stride, g.rows, g.out_features);
    MapMat<Real> dwm(dw_partial.data() + n * wlen, g.out_features, g.in_features);
    dwm.noalias() = dym.transpose() * xm;
    if (need_dx) {
      MapMat<Real> dxm(out.dx.data() + n * in_stride, g.rows, g.in_features);
      dxm.noalias() = dym * wm;
    }
  }
  ordered_sum(dw_partial, g.batch, wlen, out.dw);
  if (need_db) {
    out.db.assign(static_cast<std::size_t>(g.out_features), Real{0});
    const std::size_t m = static_cast<std::size_t>(g.batch) * g.rows;
    for (std::size_t r = 0; r < m; ++r)
      for (int o = 0; o < g.out_features; ++o) out.db[o] += dy[r * g.out_features + o];
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
#pragma omp parallel for schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    for (int gr = 0; gr < g.groups; ++gr) {
      const std::size_t base = (static_cast<std::size_t>(n) * g.channels + gr * cpg) * g.spatial;
      const Real* xs = x.data() + base;
      Real sum = 0;
      Real lo = xs[0], hi = xs[0];
      for (std::size_t i = 0; i < group_size; ++i) {
        sum += xs[i];
        lo = std::min(lo, xs[i]);
        hi = std::max(hi, xs[i]);
      }
      const Real mean = sum / static_cast<Real>(group_size);
      Real var = 0;
      for (std::size_t i = 0; i < group_size; ++i) var += (xs[i] - mean) * (xs[i] - mean);
      var /= static_cast<Real>(group_size);
      const bool flat = lo == hi;
      const Real rstd = Real{1} / std::sqrt(var + eps);
      out.mean[n * g.groups + gr] = mean;
      out.rstd[n * g.groups + gr] = rstd;
      for (int c = 0; c < cpg; ++c) {
        const int ch = gr * cpg + c;
        Real* ys = out.y.data() + base + static_cast<std::size_t>(c) * g.spatial;
        const Real* xc = xs + static_cast<std::size_t>(c) * g.spatial;
        for (int s = 0; s < g.spatial; ++s) {
          const Real normalized = flat ? Real{0} : (xc[s] - mean) * rstd;
          ys[s] = normalized * gamma[ch] + beta[ch];
        }
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
  std::vector<Real> dgamma_partial(static_cast<std::size_t>(g.batch) * g.channels, Real{0});
  std::vector<Real> dbeta_partial(dgamma_partial.size(), Real{0});
#pragma omp parallel for schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    for (int gr = 0; gr < g.groups; ++gr) {
      const std::size_t base = (static_cast<std::size_t>(n) * g.channels + gr * cpg) * g.spatial;
      const Real mean = fwd.mean[n * g.groups + gr];
      const Real rstd = fwd.rstd[n * g.groups + gr];
      Real sum_dxhat = 0, sum_dxhat_xhat = 0;
      for (int c = 0; c < cpg; ++c) {
        const int ch = gr * cpg + c;
        Real dg = 0, db = 0;
        for (int s = 0; s < g.spatial; ++s) {
          const std::size_t i = base + static_cast<std::size_t>(c) * g.spatial + s;
          const Real xhat = (x[i] - mean) * rstd;
          dg += dy[i] * xhat;
          db += dy[i];
          const Real dxhat = dy[i] * gamma[ch];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        dgamma_partial[static_cast<std::size_t>(n) * g.channels + ch] = dg;
        dbeta_partial[static_cast<std::size_t>(n) * g.channels + ch] = db;
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
  }
  ordered_sum(dgamma_partial, g.batch, static_cast<std::size_t>(g.channels), out.dgamma);
  ordered_sum(dbeta_partial, g.batch, static_cast<std::size_t>(g.channels), out.dbeta);
  return out;
}

template <std::floating_point Real>
AttentionForward<Real> attention_forward(const AttentionGeometry& g, std::span<const Real> q, std::span<const Real> k,
                                         std::span<const Real> v) {
  AttentionForward<Real> out;
  const std::size_t q_stride = static_cast<std::size_t>(g.queries) * g.dim;
  const std::size_t k_stride = static_cast<std::size_t>(g.keys) * g.dim;
  const std::size_t v_stride = static_cast<std::size_t>(g.keys) * g.value_dim;
  const std::size_t o_stride = static_cast<std::size_t>(g.queries) * g.value_dim;
  const std::size_t p_stride = static_cast<std::size_t>(g.queries) * g.keys;
  out.out.resize(static_cast<std::size_t>(g.batch) * o_stride);
  out.probs.resize(static_cast<std::size_t>(g.batch) * p_stride);
  const Real scale = Real{1} / std::sqrt(static_cast<Real>(g.dim));
#pragma omp parallel for schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    const CMapMat<Real> qm(q.data() + n * q_stride, g.queries, g.dim);
    const CMapMat<Real> km(k.data() + n * k_stride, g.keys, g.dim);
    const CMapMat<Real> vm(v.data() + n * v_stride, g.keys, g.value_dim);
    MapMat<Real> pm(out.probs.data() + n * p_stride, g.queries, g.keys);
    pm.noalias() = (qm * km.transpose()) * scale;
    for (int i = 0; i < g.queries; ++i) {
      const Real mx = pm.row(i).maxCoeff();
      pm.row(i) = (pm.row(i).array() - mx).exp();
      pm.row(i) /= pm.row(i).sum();
    }
    MapMat<Real> om(out.out.data() + n * o_stride, g.queries, g.value_dim);
    om.noalias() = pm * vm;
  }
  return out;
}

template <std::floating_point Real>
AttentionGrads<Real> attention_backward(const AttentionGeometry& g, std::span<const Real> q, std::span<const Real> k,
                                        std::span<const Real> v, std::span<const Real> probs,
                                        std::span<const Real> dout) {
  AttentionGrads<Real> out;
  out.dq.resize(q.size());
  out.dk.resize(k.size());
  out.dv.resize(v.size());
  const std::size_t q_stride = static_cast<std::size_t>(g.queries) * g.dim;
  const std::size_t k_stride = static_cast<std::size_t>(g.keys) * g.dim;
  const std::size_t v_stride = static_cast<std::size_t>(g.keys) * g.value_dim;
  const std::size_t o_stride = static_cast<std::size_t>(g.queries) * g.value_dim;
  const std::size_t p_stride = static_cast<std::size_t>(g.queries) * g.keys;
  const Real scale = Real{1} / std::sqrt(static_cast<Real>(g.dim));
#pragma omp parallel for schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    const CMapMat<Real> qm(q.data() + n * q_stride, g.queries, g.dim);
    const CMapMat<Real> km(k.data() + n * k_stride, g.keys, g.dim);
    const CMapMat<Real> vm(v.data() + n * v_stride, g.keys, g.value_dim);
    const CMapMat<Real> pm(probs.data() + n * p_stride, g.queries, g.keys);
    const CMapMat<Real> dom(dout.data() + n * o_stride, g.queries, g.value_dim);
    MapMat<Real>(out.dv.data() + n * v_stride, g.keys, g.value_dim).noalias() = pm.transpose() * dom;
    RowMat<Real> dp = dom * vm.transpose();
    for (int i = 0; i < g.queries; ++i) {
      const Real dot = dp.row(i).dot(pm.row(i));
      dp.row(i) = (pm.row(i).array() * (dp.row(i).array() - dot) * scale).matrix();
    }
    MapMat<Real>(out.dq.data() + n * q_stride, g.queries, g.dim).noalias() = dp * km;
    MapMat<Real>(out.dk.data() + n * k_stride, g.keys, g.dim).noalias() = dp.transpose() * qm;
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

}  // namespace tidm::kernels
