#include "tidm/ops.hpp"

#include <cmath>
#include <string>

#include "tidm/kernels.hpp"

namespace tidm::ops {

namespace {

template <class Real>
using NodeT = detail::Node<Real>;

template <class Real>
void require_same(const Var<Real>& a, const Var<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class Real>
void require_rank(const Var<Real>& a, int rank, const char* op, const char* what) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

template <class Real>
Var<Real> finish(const char* op, Tensor<Real> value, std::vector<Var<Real>> inputs,
                 std::function<void(NodeT<Real>&)> backward) {
  require_finite(value, op);
  return make_node(std::move(value), std::move(inputs), std::move(backward));
}

template <class Real>
bool wants(const NodeT<Real>& self, std::size_t i) {
  return i < self.inputs.size() && self.inputs[i] && self.inputs[i]->requires_grad;
}

}  // namespace

template <std::floating_point Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  require_same(a, b, "add");
  Tensor<Real> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return finish<Real>("add", std::move(out), {a, b}, [](NodeT<Real>& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    if (wants(self, 1)) self.inputs[1]->accumulate(self.grad);
  });
}

template <std::floating_point Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  require_same(a, b, "sub");
  Tensor<Real> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return finish<Real>("sub", std::move(out), {a, b}, [](NodeT<Real>& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    if (wants(self, 1)) {
      std::vector<Real> g(self.grad.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = -self.grad[i];
      self.inputs[1]->accumulate(g);
    }
  });
}

template <std::floating_point Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  require_same(a, b, "mul");
  Tensor<Real> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return finish<Real>("mul", std::move(out), {a, b}, [](NodeT<Real>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    std::vector<Real> g(self.grad.size());
    if (wants(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * bv[i];
      self.inputs[0]->accumulate(g);
    }
    if (wants(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * av[i];
      self.inputs[1]->accumulate(g);
    }
  });
}

template <std::floating_point Real>
Var<Real> scale(const Var<Real>& a, Real factor) {
  Tensor<Real> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return finish<Real>("scale", std::move(out), {a}, [factor](NodeT<Real>& self) {
    std::vector<Real> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * factor;
    self.inputs[0]->accumulate(g);
  });
}

template <std::floating_point Real>
Var<Real> silu(const Var<Real>& a) {
  Tensor<Real> out = a.value();
  for (auto& v : out.data()) v = v / (Real{1} + std::exp(-v));
  return finish<Real>("silu", std::move(out), {a}, [](NodeT<Real>& self) {
    const auto& x = self.inputs[0]->value;
    std::vector<Real> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real s = Real{1} / (Real{1} + std::exp(-x[i]));
      g[i] = self.grad[i] * s * (Real{1} + x[i] * (Real{1} - s));
    }
    self.inputs[0]->accumulate(g);
  });
}

template <std::floating_point Real>
Var<Real> reshape(const Var<Real>& a, Shape shape) {
  if (numel(shape) != a.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_node<Real>(a.value().reshaped(std::move(shape)), {a},
                         [](NodeT<Real>& self) { self.inputs[0]->accumulate(self.grad); });
}

template <std::floating_point Real>
Var<Real> sum(const Var<Real>& a) {
  double s = 0;
  for (Real v : a.value().data()) s += v;
  return finish<Real>("sum", Tensor<Real>::scalar(static_cast<Real>(s)), {a}, [](NodeT<Real>& self) {
    std::vector<Real> g(self.inputs[0]->value.size(), self.grad[0]);
    self.inputs[0]->accumulate(g);
  });
}

template <std::floating_point Real>
Var<Real> mean(const Var<Real>& a) {
  const Real inv = Real{1} / static_cast<Real>(a.value().size());
  double s = 0;
  for (Real v : a.value().data()) s += v;
  return finish<Real>("mean", Tensor<Real>::scalar(static_cast<Real>(s / static_cast<double>(a.value().size()))), {a}, [inv](NodeT<Real>& self) {
    std::vector<Real> g(self.inputs[0]->value.size(), self.grad[0] * inv);
    self.inputs[0]->accumulate(g);
  });
}

template <std::floating_point Real>
Var<Real> mse(const Var<Real>& a, const Var<Real>& b) {
  require_same(a, b, "mse");
  const std::size_t n = a.value().size();
  const Real inv = Real{1} / static_cast<Real>(n);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.value()[i]) - b.value()[i];
    s += d * d;
  }
  return finish<Real>("mse", Tensor<Real>::scalar(static_cast<Real>(s / static_cast<double>(n))), {a, b}, [inv](NodeT<Real>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    std::vector<Real> g(av.size());
    const Real k = Real{2} * inv * self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = k * (av[i] - bv[i]);
    if (wants(self, 0)) self.inputs[0]->accumulate(g);
    if (wants(self, 1)) {
      for (auto& v : g) v = -v;
      self.inputs[1]->accumulate(g);
    }
  });
}

template <std::floating_point Real>
Var<Real> weighted_mse(const Var<Real>& pred, const Var<Real>& target, std::span<const Real> weights) {
  require_same(pred, target, "weighted_mse");
  if (pred.value().rank() == 0 || static_cast<int>(weights.size()) != pred.shape()[0]) {
    throw ShapeError("weighted_mse: " + std::to_string(weights.size()) + " weights for shape " +
                     shape_str(pred.shape()));
  }
  const std::size_t n = pred.value().size();
  const std::size_t per = n / weights.size();
  const Real inv = Real{1} / static_cast<Real>(n);
  double total = 0;
  for (std::size_t b = 0; b < weights.size(); ++b) {
    double s = 0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const double d = static_cast<double>(pred.value()[i]) - target.value()[i];
      s += d * d;
    }
    total += static_cast<double>(weights[b]) * s;
  }
  std::vector<Real> w(weights.begin(), weights.end());
  return finish<Real>("weighted_mse", Tensor<Real>::scalar(static_cast<Real>(total / static_cast<double>(n))), {pred, target},
                      [inv, per, w = std::move(w)](NodeT<Real>& self) {
                        const auto& pv = self.inputs[0]->value;
                        const auto& tv = self.inputs[1]->value;
                        std::vector<Real> g(pv.size());
                        for (std::size_t i = 0; i < g.size(); ++i)
                          g[i] = Real{2} * inv * self.grad[0] * w[i / per] * (pv[i] - tv[i]);
                        if (wants(self, 0)) self.inputs[0]->accumulate(g);
                        if (wants(self, 1)) {
                          for (auto& v : g) v = -v;
                          self.inputs[1]->accumulate(g);
                        }
                      });
}

template <std::floating_point Real>
Var<Real> cross_entropy(const Var<Real>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy", "logits");
  const int n = logits.shape()[0], c = logits.shape()[1];
  if (static_cast<int>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  std::vector<Real> probs(static_cast<std::size_t>(n) * c);
  Real loss = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= c) throw ValueError("cross_entropy: label out of range");
    const Real* row = logits.value().data().data() + static_cast<std::size_t>(i) * c;
    Real mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    Real z = 0;
    for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j < c; ++j) probs[static_cast<std::size_t>(i) * c + j] = std::exp(row[j] - mx) / z;
    loss += -(row[labels[i]] - mx - std::log(z));
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return finish<Real>("cross_entropy", Tensor<Real>::scalar(loss / static_cast<Real>(n)), {logits},
                      [n, c, probs = std::move(probs), lab = std::move(lab)](NodeT<Real>& self) {
                        std::vector<Real> g(probs);
                        for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i) * c + lab[i]] -= Real{1};
                        const Real k = self.grad[0] / static_cast<Real>(n);
                        for (auto& v : g) v *= k;
                        self.inputs[0]->accumulate(g);
                      });
}

template <std::floating_point Real>
Var<Real> conv2d(const Var<Real>& x, const Var<Real>& w, const Var<Real>& bias, Conv2dOptions opt) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weight");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3]) {
    throw ShapeError("conv2d: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  }
  if (bias.defined() && (bias.value().rank() != 1 || bias.shape()[0] != ws[0])) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(ws[0]) + " outputs");
  }
  if (opt.stride < 1 || opt.padding < 0) throw ValueError("conv2d: invalid stride/padding");
  kernels::ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], opt.stride, opt.padding};
  if (g.out_height() < 1 || g.out_width() < 1) {
    throw ShapeError("conv2d: kernel " + std::to_string(ws[2]) + " larger than padded input " + shape_str(xs));
  }
  auto y = kernels::conv2d_forward<Real>(g, x.value().data(), w.value().data(),
                                         bias.defined() ? bias.value().data() : std::span<const Real>{});
  Tensor<Real> out({g.batch, g.out_channels, g.out_height(), g.out_width()}, std::move(y));
  std::vector<Var<Real>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return finish<Real>("conv2d", std::move(out), std::move(inputs), [g](NodeT<Real>& self) {
    const bool need_dx = wants(self, 0);
    const bool need_db = wants(self, 2);
    auto grads = kernels::conv2d_backward<Real>(g, self.inputs[0]->value.data(), self.inputs[1]->value.data(),
                                                self.grad, need_dx, need_db);
    if (need_dx) self.inputs[0]->accumulate(grads.dx);
    if (wants(self, 1)) self.inputs[1]->accumulate(grads.dw);
    if (need_db) self.inputs[2]->accumulate(grads.db);
  });
}

template <std::floating_point Real>
Var<Real> linear(const Var<Real>& x, const Var<Real>& w, const Var<Real>& bias) {
  require_rank(w, 2, "linear", "weight");
  const Shape& xs = x.shape();
  if (xs.size() < 2 || xs.back() != w.shape()[1]) {
    throw ShapeError("linear: input " + shape_str(xs) + " incompatible with weight " + shape_str(w.shape()));
  }
  if (bias.defined() && (bias.value().rank() != 1 || bias.shape()[0] != w.shape()[0])) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " for weight " + shape_str(w.shape()));
  }
  const int batch = xs[0];
  const int in = xs.back();
  const int rows = static_cast<int>(x.value().size() / static_cast<std::size_t>(batch) / in);
  kernels::LinearGeometry g{batch, rows, in, w.shape()[0]};
  auto y = kernels::linear_forward<Real>(g, x.value().data(), w.value().data(),
                                         bias.defined() ? bias.value().data() : std::span<const Real>{});
  Shape os = xs;
  os.back() = g.out_features;
  std::vector<Var<Real>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return finish<Real>("linear", Tensor<Real>(std::move(os), std::move(y)), std::move(inputs), [g](NodeT<Real>& self) {
    const bool need_dx = wants(self, 0);
    const bool need_db = wants(self, 2);
    auto grads = kernels::linear_backward<Real>(g, self.inputs[0]->value.data(), self.inputs[1]->value.data(),
                                                self.grad, need_dx, need_db);
    if (need_dx) self.inputs[0]->accumulate(grads.dx);
    if (wants(self, 1)) self.inputs[1]->accumulate(grads.dw);
    if (need_db) self.inputs[2]->accumulate(grads.db);
  });
}

template <std::floating_point Real>
Var<Real> group_norm(const Var<Real>& x, const Var<Real>& gamma, const Var<Real>& beta, int groups, Real eps) {
  require_rank(x, 4, "group_norm", "input");
  const Shape& xs = x.shape();
  if (groups < 1 || xs[1] % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(xs[1]) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gamma.shape() != Shape{xs[1]} || beta.shape() != Shape{xs[1]}) {
    throw ShapeError("group_norm: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " for " + std::to_string(xs[1]) + " channels");
  }
  kernels::NormGeometry g{xs[0], xs[1], xs[2] * xs[3], groups};
  auto fwd = std::make_shared<kernels::NormForward<Real>>(
      kernels::group_norm_forward<Real>(g, x.value().data(), gamma.value().data(), beta.value().data(), eps));
  Tensor<Real> out(xs, fwd->y);
  return finish<Real>("group_norm", std::move(out), {x, gamma, beta}, [g, fwd](NodeT<Real>& self) {
    auto grads = kernels::group_norm_backward<Real>(g, self.inputs[0]->value.data(), self.inputs[1]->value.data(),
                                                    *fwd, self.grad);
    if (wants(self, 0)) self.inputs[0]->accumulate(grads.dx);
    if (wants(self, 1)) self.inputs[1]->accumulate(grads.dgamma);
    if (wants(self, 2)) self.inputs[2]->accumulate(grads.dbeta);
  });
}

template <std::floating_point Real>
Var<Real> attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v) {
  require_rank(q, 3, "attention", "query");
  require_rank(k, 3, "attention", "key");
  require_rank(v, 3, "attention", "value");
  const Shape &qs = q.shape(), &ks = k.shape(), &vs = v.shape();
  if (qs[0] != ks[0] || ks[0] != vs[0] || qs[2] != ks[2] || ks[1] != vs[1]) {
    throw ShapeError("attention: incompatible q " + shape_str(qs) + ", k " + shape_str(ks) + ", v " + shape_str(vs));
  }
  kernels::AttentionGeometry g{qs[0], qs[1], ks[1], qs[2], vs[2]};
  auto fwd = kernels::attention_forward<Real>(g, q.value().data(), k.value().data(), v.value().data());
  auto probs = std::make_shared<std::vector<Real>>(std::move(fwd.probs));
  Tensor<Real> out({g.batch, g.queries, g.value_dim}, std::move(fwd.out));
  return finish<Real>("attention", std::move(out), {q, k, v}, [g, probs](NodeT<Real>& self) {
    auto grads = kernels::attention_backward<Real>(g, self.inputs[0]->value.data(), self.inputs[1]->value.data(),
                                                   self.inputs[2]->value.data(), *probs, self.grad);
    if (wants(self, 0)) self.inputs[0]->accumulate(grads.dq);
    if (wants(self, 1)) self.inputs[1]->accumulate(grads.dk);
    if (wants(self, 2)) self.inputs[2]->accumulate(grads.dv);
  });
}

template <std::floating_point Real>
Var<Real> upsample_nearest2x(const Var<Real>& x) {
  require_rank(x, 4, "upsample_nearest2x", "input");
  const Shape& xs = x.shape();
  const int planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  Tensor<Real> out({xs[0], xs[1], 2 * h, 2 * w});
  for (int p = 0; p < planes; ++p)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        out[(static_cast<std::size_t>(p) * 2 * h + y) * 2 * w + xx] =
            x.value()[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2];
  return finish<Real>("upsample_nearest2x", std::move(out), {x}, [planes, h, w](NodeT<Real>& self) {
    std::vector<Real> g(static_cast<std::size_t>(planes) * h * w, Real{0});
    for (int p = 0; p < planes; ++p)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          g[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2] +=
              self.grad[(static_cast<std::size_t>(p) * 2 * h + y) * 2 * w + xx];
    self.inputs[0]->accumulate(g);
  });
}

template <std::floating_point Real>
Var<Real> concat_channels(const Var<Real>& a, const Var<Real>& b) {
  require_rank(a, 4, "concat_channels", "first input");
  require_rank(b, 4, "concat_channels", "second input");
  const Shape &as = a.shape(), &bs = b.shape();
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
    throw ShapeError("concat_channels: " + shape_str(as) + " vs " + shape_str(bs));
  }
  const std::size_t plane = static_cast<std::size_t>(as[2]) * as[3];
  const std::size_t sa = as[1] * plane, sb = bs[1] * plane;
  const int n = as[0];
  Tensor<Real> out({n, as[1] + bs[1], as[2], as[3]});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.value().data().data() + i * sa, sa, out.data().data() + i * (sa + sb));
    std::copy_n(b.value().data().data() + i * sb, sb, out.data().data() + i * (sa + sb) + sa);
  }
  return finish<Real>("concat_channels", std::move(out), {a, b}, [n, sa, sb](NodeT<Real>& self) {
    if (wants(self, 0)) {
      std::vector<Real> g(n * sa);
      for (int i = 0; i < n; ++i) std::copy_n(self.grad.data() + i * (sa + sb), sa, g.data() + i * sa);
      self.inputs[0]->accumulate(g);
    }
    if (wants(self, 1)) {
      std::vector<Real> g(n * sb);
      for (int i = 0; i < n; ++i) std::copy_n(self.grad.data() + i * (sa + sb) + sa, sb, g.data() + i * sb);
      self.inputs[1]->accumulate(g);
    }
  });
}

namespace {

// [N,A,B] -> [N,B,A]
template <class Real>
void transpose_inner(const Real* in, Real* out, int n, int a, int b) {
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < a; ++r)
      for (int c = 0; c < b; ++c)
        out[(static_cast<std::size_t>(i) * b + c) * a + r] = in[(static_cast<std::size_t>(i) * a + r) * b + c];
}

}  // namespace

template <std::floating_point Real>
Var<Real> to_tokens(const Var<Real>& x) {
  require_rank(x, 4, "to_tokens", "input");
  const Shape& xs = x.shape();
  const int n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  Tensor<Real> out({n, hw, c});
  transpose_inner(x.value().data().data(), out.data().data(), n, c, hw);
  return finish<Real>("to_tokens", std::move(out), {x}, [n, c, hw](NodeT<Real>& self) {
    std::vector<Real> g(self.grad.size());
    transpose_inner(self.grad.data(), g.data(), n, hw, c);
    self.inputs[0]->accumulate(g);
  });
}

template <std::floating_point Real>
Var<Real> from_tokens(const Var<Real>& t, int height, int width) {
  require_rank(t, 3, "from_tokens", "input");
  const Shape& ts = t.shape();
  if (ts[1] != height * width) {
    throw ShapeError("from_tokens: " + shape_str(ts) + " cannot form " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  const int n = ts[0], hw = ts[1], c = ts[2];
  Tensor<Real> out({n, c, height, width});
  transpose_inner(t.value().data().data(), out.data().data(), n, hw, c);
  return finish<Real>("from_tokens", std::move(out), {t}, [n, c, hw](NodeT<Real>& self) {
    std::vector<Real> g(self.grad.size());
    transpose_inner(self.grad.data(), g.data(), n, c, hw);
    self.inputs[0]->accumulate(g);
  });
}

template <std::floating_point Real>
Var<Real> add_channel_bias(const Var<Real>& x, const Var<Real>& v) {
  require_rank(x, 4, "add_channel_bias", "input");
  require_rank(v, 2, "add_channel_bias", "bias");
  const Shape& xs = x.shape();
  if (v.shape()[0] != xs[0] || v.shape()[1] != xs[1]) {
    throw ShapeError("add_channel_bias: bias " + shape_str(v.shape()) + " for input " + shape_str(xs));
  }
  const std::size_t planes = static_cast<std::size_t>(xs[0]) * xs[1];
  const std::size_t hw = static_cast<std::size_t>(xs[2]) * xs[3];
  Tensor<Real> out = x.value();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] += v.value()[p];
  return finish<Real>("add_channel_bias", std::move(out), {x, v}, [planes, hw](NodeT<Real>& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    if (wants(self, 1)) {
      std::vector<Real> g(planes, Real{0});
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < hw; ++i) g[p] += self.grad[p * hw + i];
      self.inputs[1]->accumulate(g);
    }
  });
}

template <std::floating_point Real>
Var<Real> scale_per_sample(const Var<Real>& x, std::span<const Real> mask) {
  if (x.value().rank() == 0 || static_cast<int>(mask.size()) != x.shape()[0]) {
    throw ShapeError("scale_per_sample: " + std::to_string(mask.size()) + " factors for " + shape_str(x.shape()));
  }
  const std::size_t per = x.value().size() / mask.size();
  Tensor<Real> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i / per];
  std::vector<Real> m(mask.begin(), mask.end());
  return finish<Real>("scale_per_sample", std::move(out), {x}, [per, m = std::move(m)](NodeT<Real>& self) {
    std::vector<Real> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * m[i / per];
    self.inputs[0]->accumulate(g);
  });
}

template <std::floating_point Real>
Var<Real> embedding(const Var<Real>& table, std::span<const int> ids, int batch, int length) {
  require_rank(table, 2, "embedding", "table");
  if (static_cast<int>(ids.size()) != batch * length) {
    throw ShapeError("embedding: " + std::to_string(ids.size()) + " ids for batch " + std::to_string(batch) +
                     " x length " + std::to_string(length));
  }
  const int vocab = table.shape()[0], dim = table.shape()[1];
  Tensor<Real> out({batch, length, dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw ValueError("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(table.value().data().data() + static_cast<std::size_t>(ids[i]) * dim, dim,
                out.data().data() + i * dim);
  }
  std::vector<int> id_copy(ids.begin(), ids.end());
  return finish<Real>("embedding", std::move(out), {table}, [dim, id_copy = std::move(id_copy)](NodeT<Real>& self) {
    auto g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < id_copy.size(); ++i)
      for (int d = 0; d < dim; ++d) g[static_cast<std::size_t>(id_copy[i]) * dim + d] += self.grad[i * dim + d];
  });
}

template <std::floating_point Real>
Var<Real> add_broadcast_leading(const Var<Real>& x, const Var<Real>& y) {
  const Shape& xs = x.shape();
  if (xs.size() != y.shape().size() + 1 || !std::equal(y.shape().begin(), y.shape().end(), xs.begin() + 1)) {
    throw ShapeError("add_broadcast_leading: " + shape_str(xs) + " + " + shape_str(y.shape()));
  }
  const std::size_t per = y.value().size();
  Tensor<Real> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y.value()[i % per];
  return finish<Real>("add_broadcast_leading", std::move(out), {x, y}, [per](NodeT<Real>& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    if (wants(self, 1)) {
      std::vector<Real> g(per, Real{0});
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % per] += self.grad[i];
      self.inputs[1]->accumulate(g);
    }
  });
}

#define TIDM_INSTANTIATE(R)                                                                               \
  template Var<R> add(const Var<R>&, const Var<R>&);                                                      \
  template Var<R> sub(const Var<R>&, const Var<R>&);                                                      \
  template Var<R> mul(const Var<R>&, const Var<R>&);                                                      \
  template Var<R> scale(const Var<R>&, R);                                                                \
  template Var<R> silu(const Var<R>&);                                                                    \
  template Var<R> reshape(const Var<R>&, Shape);                                                          \
  template Var<R> sum(const Var<R>&);                                                                     \
  template Var<R> mean(const Var<R>&);                                                                    \
  template Var<R> mse(const Var<R>&, const Var<R>&);                                                      \
  template Var<R> weighted_mse(const Var<R>&, const Var<R>&, std::span<const R>);                         \
  template Var<R> cross_entropy(const Var<R>&, std::span<const int>);                                     \
  template Var<R> conv2d(const Var<R>&, const Var<R>&, const Var<R>&, Conv2dOptions);                     \
  template Var<R> linear(const Var<R>&, const Var<R>&, const Var<R>&);                                    \
  template Var<R> group_norm(const Var<R>&, const Var<R>&, const Var<R>&, int, R);                        \
  template Var<R> attention(const Var<R>&, const Var<R>&, const Var<R>&);                                 \
  template Var<R> upsample_nearest2x(const Var<R>&);                                                      \
  template Var<R> concat_channels(const Var<R>&, const Var<R>&);                                          \
  template Var<R> to_tokens(const Var<R>&);                                                               \
  template Var<R> from_tokens(const Var<R>&, int, int);                                                   \
  template Var<R> add_channel_bias(const Var<R>&, const Var<R>&);                                         \
  template Var<R> scale_per_sample(const Var<R>&, std::span<const R>);                                    \
  template Var<R> embedding(const Var<R>&, std::span<const int>, int, int);                               \
  template Var<R> add_broadcast_leading(const Var<R>&, const Var<R>&);

TIDM_INSTANTIATE(float)
TIDM_INSTANTIATE(double)

}  // namespace tidm::ops
