#include "tidm/layers.hpp"

#include <cmath>

namespace tidm::layers {

namespace {

Tensor<float> fan_in_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor<float> t = sample_standard_normal<float>(rng, shape);
  const float std = 1.0f / std::sqrt(static_cast<float>(fan_in));
  for (auto& v : t.data()) v *= std;
  return t;
}

}  // namespace

int norm_groups(int channels) {
  for (int g : {8, 4, 2}) {
    if (channels % g == 0 && channels / g >= 2) return g;
  }
  return 1;
}

void init_conv(ParamStore<float>& p, const std::string& name, int in, int out, int kernel, Rng& rng, Init init) {
  const Shape shape{out, in, kernel, kernel};
  p.set(name + "/weight", init == Init::zero ? Tensor<float>(shape) : fan_in_normal(shape, in * kernel * kernel, rng));
  p.set(name + "/bias", Tensor<float>(Shape{out}));
}

void init_linear(ParamStore<float>& p, const std::string& name, int in, int out, Rng& rng, Init init) {
  const Shape shape{out, in};
  p.set(name + "/weight", init == Init::zero ? Tensor<float>(shape) : fan_in_normal(shape, in, rng));
  p.set(name + "/bias", Tensor<float>(Shape{out}));
}

void init_norm(ParamStore<float>& p, const std::string& name, int channels) {
  p.set(name + "/gamma", Tensor<float>(Shape{channels}, 1.0f));
  p.set(name + "/beta", Tensor<float>(Shape{channels}));
}

void init_resblock(ParamStore<float>& p, const std::string& name, int in, int out, int time_dim, Rng& rng) {
  init_norm(p, name + "/norm1", in);
  init_conv(p, name + "/conv1", in, out, 3, rng);
  if (time_dim > 0) init_linear(p, name + "/time", time_dim, out, rng);
  init_norm(p, name + "/norm2", out);
  init_conv(p, name + "/conv2", out, out, 3, rng);
  if (in != out) init_conv(p, name + "/skip", in, out, 1, rng);
}

void init_cross_attention(ParamStore<float>& p, const std::string& name, int channels, int context_dim, Rng& rng) {
  init_norm(p, name + "/norm", channels);
  init_linear(p, name + "/query", channels, channels, rng);
  init_linear(p, name + "/key", context_dim, channels, rng);
  init_linear(p, name + "/value", context_dim, channels, rng);
  init_linear(p, name + "/out", channels, channels, rng);
  // A key bias only shifts every logit of a query equally; softmax ignores it.
  for (const char* proj : {"/query/bias", "/key/bias", "/value/bias"}) p.erase(name + proj);
}

template <std::floating_point Real>
Var<Real> conv(Tape<Real>& tape, const std::string& name, const Var<Real>& x, int stride) {
  Var<Real> w = tape.param(name + "/weight");
  const int k = w.shape()[2];
  return ops::conv2d(x, w, tape.param(name + "/bias"), {stride, k / 2});
}

template <std::floating_point Real>
Var<Real> dense(Tape<Real>& tape, const std::string& name, const Var<Real>& x) {
  const std::string bias = name + "/bias";
  return ops::linear(x, tape.param(name + "/weight"), tape.has(bias) ? tape.param(bias) : Var<Real>{});
}

template <std::floating_point Real>
Var<Real> norm(Tape<Real>& tape, const std::string& name, const Var<Real>& x) {
  return ops::group_norm(x, tape.param(name + "/gamma"), tape.param(name + "/beta"), norm_groups(x.shape()[1]));
}

template <std::floating_point Real>
Var<Real> resblock(Tape<Real>& tape, const std::string& name, const Var<Real>& x, const Var<Real>& time) {
  Var<Real> h = conv(tape, name + "/conv1", ops::silu(norm(tape, name + "/norm1", x)));
  if (time.defined() && tape.has(name + "/time/weight")) {
    h = ops::add_channel_bias(h, dense(tape, name + "/time", ops::silu(time)));
  }
  h = conv(tape, name + "/conv2", ops::silu(norm(tape, name + "/norm2", h)));
  Var<Real> skip = tape.has(name + "/skip/weight") ? conv(tape, name + "/skip", x) : x;
  return ops::add(skip, h);
}

template <std::floating_point Real>
Var<Real> cross_attention(Tape<Real>& tape, const std::string& name, const Var<Real>& x, const Var<Real>& context) {
  const int height = x.shape()[2], width = x.shape()[3];
  Var<Real> tokens = ops::to_tokens(norm(tape, name + "/norm", x));
  Var<Real> q = dense(tape, name + "/query", tokens);
  Var<Real> k = dense(tape, name + "/key", context);
  Var<Real> v = dense(tape, name + "/value", context);
  Var<Real> attended = dense(tape, name + "/out", ops::attention(q, k, v));
  return ops::add(x, ops::from_tokens(attended, height, width));
}

#define TIDM_INSTANTIATE(R)                                                                          \
  template Var<R> conv(Tape<R>&, const std::string&, const Var<R>&, int);                            \
  template Var<R> dense(Tape<R>&, const std::string&, const Var<R>&);                                \
  template Var<R> norm(Tape<R>&, const std::string&, const Var<R>&);                                 \
  template Var<R> resblock(Tape<R>&, const std::string&, const Var<R>&, const Var<R>&);              \
  template Var<R> cross_attention(Tape<R>&, const std::string&, const Var<R>&, const Var<R>&);

TIDM_INSTANTIATE(float)
TIDM_INSTANTIATE(double)

}  // namespace tidm::layers
