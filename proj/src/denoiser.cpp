#include "tidm/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "tidm/layers.hpp"

namespace tidm {

namespace {

const std::string kMain = "unet/main/";
const std::string kAnchor = "unet/anchor/";

std::string down(const std::string& stream, int level) { return stream + "down" + std::to_string(level) + "/"; }
std::string up(int level) { return kMain + "up" + std::to_string(level) + "/"; }
std::string indexed(const std::string& base, int i) { return base + std::to_string(i); }

/// Channel count at each skip position of the down path.
std::vector<int> skip_channels(const DenoiserConfig& c) {
  std::vector<int> out{c.channels(0)};
  for (int l = 0; l < c.levels(); ++l) {
    for (int b = 0; b < c.blocks; ++b) out.push_back(c.channels(l));
    if (l + 1 < c.levels()) out.push_back(c.channels(l));
  }
  return out;
}

void init_down_path(ParamStore<float>& p, const DenoiserConfig& c, const std::string& stream, Rng& rng) {
  layers::init_conv(p, stream + "conv_in", c.latent_channels, c.channels(0), 3, rng);
  int ch = c.channels(0);
  for (int l = 0; l < c.levels(); ++l) {
    for (int b = 0; b < c.blocks; ++b) {
      layers::init_resblock(p, indexed(down(stream, l) + "res", b), ch, c.channels(l), c.time_embed_dim, rng);
      ch = c.channels(l);
      if (c.has_attention(l)) layers::init_cross_attention(p, indexed(down(stream, l) + "attn", b), ch, c.context_dim, rng);
    }
    if (l + 1 < c.levels()) layers::init_conv(p, down(stream, l) + "downsample", ch, ch, 3, rng);
  }
}

template <std::floating_point Real>
Var<Real> time_features(Tape<Real>& tape, const DenoiserConfig& c, std::span<const int> timesteps) {
  const int dim = c.base_channels;
  std::vector<Real> flat;
  flat.reserve(timesteps.size() * static_cast<std::size_t>(dim));
  for (int t : timesteps) {
    auto e = time_embedding<Real>(t, dim);
    flat.insert(flat.end(), e.begin(), e.end());
  }
  Var<Real> s = constant(Tensor<Real>({static_cast<int>(timesteps.size()), dim}, std::move(flat)));
  return layers::dense(tape, kMain + "time/lin2", ops::silu(layers::dense(tape, kMain + "time/lin1", s)));
}

/// Runs a down path; `visit(i, h)` sees each skip-position feature and may
/// replace it.
template <std::floating_point Real, typename Visit>
Var<Real> run_down_path(Tape<Real>& tape, const DenoiserConfig& c, const std::string& stream, const Var<Real>& input,
                        const Var<Real>& temb, const Var<Real>& context, Visit&& visit) {
  int index = 0;
  Var<Real> h = visit(index++, layers::conv(tape, stream + "conv_in", input));
  for (int l = 0; l < c.levels(); ++l) {
    for (int b = 0; b < c.blocks; ++b) {
      h = layers::resblock(tape, indexed(down(stream, l) + "res", b), h, temb);
      if (c.has_attention(l)) h = layers::cross_attention(tape, indexed(down(stream, l) + "attn", b), h, context);
      h = visit(index++, h);
    }
    if (l + 1 < c.levels()) h = visit(index++, layers::conv(tape, down(stream, l) + "downsample", h, 2));
  }
  return h;
}

}  // namespace

bool DenoiserConfig::has_attention(int level) const {
  return std::find(attention_levels.begin(), attention_levels.end(), level) != attention_levels.end();
}

void DenoiserConfig::validate(std::optional<int> latent_size) const {
  if (latent_channels < 1 || base_channels < 2 || base_channels % 2 != 0) {
    throw ValueError("denoiser: latent_channels >= 1 and an even base_channels >= 2 required");
  }
  if (channel_mult.empty()) throw ValueError("denoiser: channel_mult is empty");
  for (int m : channel_mult)
    if (m < 1) throw ValueError("denoiser: channel multipliers must be positive");
  if (blocks < 1) throw ValueError("denoiser: blocks per level must be >= 1");
  for (int a : attention_levels)
    if (a < 0 || a >= levels()) throw ValueError("denoiser: attention level " + std::to_string(a) + " out of range");
  if (time_embed_dim < 1 || context_dim < 1) throw ValueError("denoiser: time_embed_dim and context_dim must be positive");
  if (latent_size) {
    int size = *latent_size;
    for (int l = 1; l < levels(); ++l) {
      if (size % 2 != 0) {
        throw ValueError("denoiser: latent size " + std::to_string(*latent_size) + " cannot be halved " +
                         std::to_string(levels() - 1) + " times");
      }
      size /= 2;
    }
  }
}

DenoiserConfig DenoiserConfig::infer(const ParamStore<float>& p) {
  DenoiserConfig c;
  const auto& conv_in = p.at(kMain + "conv_in/weight");
  c.base_channels = conv_in.dim(0);
  c.latent_channels = conv_in.dim(1);
  c.channel_mult.clear();
  c.attention_levels.clear();
  for (int l = 0; p.contains(down(kMain, l) + "res0/conv1/weight"); ++l) {
    c.channel_mult.push_back(p.at(down(kMain, l) + "res0/conv1/weight").dim(0) / c.base_channels);
    if (p.contains(down(kMain, l) + "attn0/query/weight")) c.attention_levels.push_back(l);
  }
  c.blocks = 0;
  while (p.contains(indexed(down(kMain, 0) + "res", c.blocks) + "/conv1/weight")) ++c.blocks;
  c.time_embed_dim = p.at(kMain + "time/lin1/weight").dim(0);
  c.context_dim = p.at(kMain + "mid/attn/key/weight").dim(1);
  c.two_stream = p.contains(kAnchor + "conv_in/weight");
  c.validate();
  return c;
}

void init_denoiser(ParamStore<float>& p, const DenoiserConfig& c, Rng& rng) {
  c.validate();
  layers::init_linear(p, kMain + "time/lin1", c.base_channels, c.time_embed_dim, rng);
  layers::init_linear(p, kMain + "time/lin2", c.time_embed_dim, c.time_embed_dim, rng);
  init_down_path(p, c, kMain, rng);

  const int last = c.channels(c.levels() - 1);
  layers::init_resblock(p, kMain + "mid/res1", last, last, c.time_embed_dim, rng);
  layers::init_cross_attention(p, kMain + "mid/attn", last, c.context_dim, rng);
  layers::init_resblock(p, kMain + "mid/res2", last, last, c.time_embed_dim, rng);

  std::vector<int> skips = skip_channels(c);
  int ch = last;
  for (int l = c.levels() - 1; l >= 0; --l) {
    for (int b = 0; b <= c.blocks; ++b) {
      const int in = ch + skips.back();
      skips.pop_back();
      layers::init_resblock(p, indexed(up(l) + "res", b), in, c.channels(l), c.time_embed_dim, rng);
      ch = c.channels(l);
      if (c.has_attention(l)) layers::init_cross_attention(p, indexed(up(l) + "attn", b), ch, c.context_dim, rng);
    }
    if (l > 0) layers::init_conv(p, up(l) + "upsample", ch, ch, 3, rng);
  }
  layers::init_norm(p, kMain + "norm_out", ch);
  layers::init_conv(p, kMain + "conv_out", ch, c.latent_channels, 3, rng, layers::Init::zero);

  if (c.two_stream) {
    init_down_path(p, c, kAnchor, rng);
    const auto widths = skip_channels(c);
    for (std::size_t i = 0; i < widths.size(); ++i) {
      layers::init_conv(p, indexed(kAnchor + "inject", static_cast<int>(i)), widths[i], widths[i], 1, rng,
                        layers::Init::zero);
    }
  }
}

template <std::floating_point Real>
std::vector<Real> time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ValueError("time_embedding: dim must be even and >= 2, got " + std::to_string(dim));
  if (t < 0) throw ValueError("time_embedding: negative timestep " + std::to_string(t));
  const int half = dim / 2;
  std::vector<Real> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out[static_cast<std::size_t>(i)] = static_cast<Real>(std::sin(t * freq));
    out[static_cast<std::size_t>(half + i)] = static_cast<Real>(std::cos(t * freq));
  }
  return out;
}

template <std::floating_point Real>
Var<Real> predict_noise(Tape<Real>& tape, const DenoiserConfig& c, const Var<Real>& z, std::span<const int> timesteps,
                        const Var<Real>& context, const AnchorInput<Real>* anchor) {
  const Shape& zs = z.shape();
  if (zs.size() != 4 || zs[1] != c.latent_channels) {
    throw ShapeError("predict_noise: latent must be [N," + std::to_string(c.latent_channels) + ",h,w], got " +
                     shape_str(zs));
  }
  const int batch = zs[0];
  if (static_cast<int>(timesteps.size()) != batch) {
    throw ShapeError("predict_noise: " + std::to_string(timesteps.size()) + " timesteps for batch " +
                     std::to_string(batch));
  }
  const Shape& cs = context.shape();
  if (cs.size() != 3 || cs[0] != batch || cs[2] != c.context_dim) {
    throw ShapeError("predict_noise: context must be [" + std::to_string(batch) + ",L," +
                     std::to_string(c.context_dim) + "], got " + shape_str(cs));
  }
  c.validate(zs[2]);
  if (zs[2] != zs[3]) throw ShapeError("predict_noise: latent must be square, got " + shape_str(zs));

  Var<Real> temb = time_features(tape, c, timesteps);

  std::vector<Var<Real>> injections;
  std::span<const Real> mask;
  if (anchor) {
    if (!c.two_stream) throw ValueError("predict_noise: anchor given to a single-stream model");
    if (anchor->latents.shape() != zs) {
      throw ShapeError("predict_noise: anchor latent " + shape_str(anchor->latents.shape()) + " vs z_t " + shape_str(zs));
    }
    if (static_cast<int>(anchor->mask.size()) != batch) throw ShapeError("predict_noise: anchor mask size mismatch");
    mask = anchor->mask;
    run_down_path(tape, c, kAnchor, constant(anchor->latents), temb, context, [&](int i, const Var<Real>& h) {
      injections.push_back(layers::conv(tape, indexed(kAnchor + "inject", i), h));
      return h;
    });
  }

  std::vector<Var<Real>> skips;
  Var<Real> h = run_down_path(tape, c, kMain, z, temb, context, [&](int i, const Var<Real>& x) {
    Var<Real> out = anchor ? ops::add(x, ops::scale_per_sample(injections[static_cast<std::size_t>(i)], mask)) : x;
    skips.push_back(out);
    return out;
  });

  h = layers::resblock(tape, kMain + "mid/res1", h, temb);
  h = layers::cross_attention(tape, kMain + "mid/attn", h, context);
  h = layers::resblock(tape, kMain + "mid/res2", h, temb);

  for (int l = c.levels() - 1; l >= 0; --l) {
    for (int b = 0; b <= c.blocks; ++b) {
      h = ops::concat_channels(h, skips.back());
      skips.pop_back();
      h = layers::resblock(tape, indexed(up(l) + "res", b), h, temb);
      if (c.has_attention(l)) h = layers::cross_attention(tape, indexed(up(l) + "attn", b), h, context);
    }
    if (l > 0) h = layers::conv(tape, up(l) + "upsample", ops::upsample_nearest2x(h));
  }
  return layers::conv(tape, kMain + "conv_out", ops::silu(layers::norm(tape, kMain + "norm_out", h)));
}

#define TIDM_INSTANTIATE(R)                                                                                  \
  template std::vector<R> time_embedding<R>(int, int);                                                       \
  template Var<R> predict_noise(Tape<R>&, const DenoiserConfig&, const Var<R>&, std::span<const int>,        \
                                const Var<R>&, const AnchorInput<R>*);

TIDM_INSTANTIATE(float)
TIDM_INSTANTIATE(double)

}  // namespace tidm
