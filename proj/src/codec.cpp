#include "tidm/codec.hpp"

#include <algorithm>
#include <cmath>

#include "tidm/layers.hpp"
#include "tidm/optim.hpp"

namespace tidm {

namespace {

std::string level(const char* stage, int i) { return std::string("codec/") + stage + std::to_string(i); }

}  // namespace

void CodecConfig::validate() const {
  if (image_channels < 1 || latent_channels < 1) throw ValueError("codec: channel counts must be positive");
  if (widths.empty()) throw ValueError("codec: need at least one width");
  for (int w : widths)
    if (w < 1) throw ValueError("codec: widths must be positive");
}

CodecConfig CodecConfig::infer(const ParamStore<float>& params) {
  CodecConfig c;
  const auto& conv_in = params.at("codec/enc/conv_in/weight");
  c.image_channels = conv_in.shape()[1];
  c.widths = {conv_in.shape()[0]};
  for (int i = 1; params.contains(level("enc/down", i) + "/conv/weight"); ++i) {
    c.widths.push_back(params.at(level("enc/down", i) + "/conv/weight").shape()[0]);
  }
  c.latent_channels = params.at("codec/enc/conv_out/weight").shape()[0];
  return c;
}

void init_codec(ParamStore<float>& p, const CodecConfig& c, Rng& rng) {
  c.validate();
  const int levels = static_cast<int>(c.widths.size());
  layers::init_conv(p, "codec/enc/conv_in", c.image_channels, c.widths[0], 3, rng);
  for (int i = 1; i < levels; ++i) {
    layers::init_conv(p, level("enc/down", i) + "/conv", c.widths[i - 1], c.widths[i], 3, rng);
    layers::init_resblock(p, level("enc/down", i) + "/res", c.widths[i], c.widths[i], 0, rng);
  }
  layers::init_norm(p, "codec/enc/norm_out", c.widths.back());
  layers::init_conv(p, "codec/enc/conv_out", c.widths.back(), c.latent_channels, 3, rng);

  layers::init_conv(p, "codec/dec/conv_in", c.latent_channels, c.widths.back(), 3, rng);
  layers::init_resblock(p, "codec/dec/res_in", c.widths.back(), c.widths.back(), 0, rng);
  for (int i = levels - 1; i >= 1; --i) {
    layers::init_conv(p, level("dec/up", i) + "/conv", c.widths[i], c.widths[i - 1], 3, rng);
    layers::init_resblock(p, level("dec/up", i) + "/res", c.widths[i - 1], c.widths[i - 1], 0, rng);
  }
  layers::init_norm(p, "codec/dec/norm_out", c.widths[0]);
  layers::init_conv(p, "codec/dec/conv_out", c.widths[0], c.image_channels, 3, rng);

  p.set("codec/latent_shift", Tensor<float>(Shape{c.latent_channels}, 0.0f));
  p.set("codec/latent_scale", Tensor<float>(Shape{c.latent_channels}, 1.0f));
}

template <std::floating_point Real>
Var<Real> encode_raw(Tape<Real>& tape, const CodecConfig& c, const Var<Real>& images) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != c.image_channels) {
    throw ShapeError("encode: expected [N," + std::to_string(c.image_channels) + ",H,W] images, got " + shape_str(s));
  }
  if (s[2] % c.factor() != 0 || s[3] % c.factor() != 0) {
    throw ShapeError("encode: image " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                     " not divisible by codec factor " + std::to_string(c.factor()));
  }
  Var<Real> h = layers::conv(tape, "codec/enc/conv_in", images);
  for (int i = 1; i < static_cast<int>(c.widths.size()); ++i) {
    h = layers::conv(tape, level("enc/down", i) + "/conv", h, 2);
    h = layers::resblock(tape, level("enc/down", i) + "/res", h, Var<Real>{});
  }
  return layers::conv(tape, "codec/enc/conv_out", ops::silu(layers::norm(tape, "codec/enc/norm_out", h)));
}

template <std::floating_point Real>
Var<Real> decode_raw(Tape<Real>& tape, const CodecConfig& c, const Var<Real>& latents) {
  const Shape& s = latents.shape();
  if (s.size() != 4 || s[1] != c.latent_channels) {
    throw ShapeError("decode: expected [N," + std::to_string(c.latent_channels) + ",h,w] latents, got " +
                     shape_str(s));
  }
  Var<Real> h = layers::conv(tape, "codec/dec/conv_in", latents);
  h = layers::resblock(tape, "codec/dec/res_in", h, Var<Real>{});
  for (int i = static_cast<int>(c.widths.size()) - 1; i >= 1; --i) {
    h = ops::upsample_nearest2x(h);
    h = layers::conv(tape, level("dec/up", i) + "/conv", h);
    h = layers::resblock(tape, level("dec/up", i) + "/res", h, Var<Real>{});
  }
  return layers::conv(tape, "codec/dec/conv_out", ops::silu(layers::norm(tape, "codec/dec/norm_out", h)));
}

LatentCodec::LatentCodec(ParamStore<float> params) : config_(CodecConfig::infer(params)), params_(std::move(params)) {
  params_.at("codec/latent_shift");
  params_.at("codec/latent_scale");
}

Shape LatentCodec::latent_shape(int height, int width) const {
  const int f = config_.factor();
  if (height < f || width < f || height % f != 0 || width % f != 0) {
    throw ShapeError("codec: image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by the downsampling factor " + std::to_string(f));
  }
  return {config_.latent_channels, height / config_.factor(), width / config_.factor()};
}

Tensor<float> LatentCodec::encode(const Tensor<float>& images) const {
  const bool single = images.rank() == 3;
  Tensor<float> batch = single ? images.reshaped({1, images.dim(0), images.dim(1), images.dim(2)}) : images;
  auto tape = Tape<float>::inference(params_);
  Tensor<float> z = encode_raw(tape, config_, constant(batch)).value();
  const auto& shift = params_.at("codec/latent_shift");
  const auto& scale = params_.at("codec/latent_scale");
  const int c = z.dim(1);
  const std::size_t plane = static_cast<std::size_t>(z.dim(2)) * z.dim(3);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const int ch = static_cast<int>((i / plane) % c);
    z[i] = (z[i] - shift[ch]) * scale[ch];
  }
  if (single) return z.reshaped({z.dim(1), z.dim(2), z.dim(3)});
  return z;
}

Tensor<float> LatentCodec::decode(const Tensor<float>& latents) const {
  const bool single = latents.rank() == 3;
  if (latents.rank() != 3 && latents.rank() != 4) {
    throw ShapeError("decode: latents must be [C,h,w] or [N,C,h,w], got " + shape_str(latents.shape()));
  }
  Tensor<float> z = single ? latents.reshaped({1, latents.dim(0), latents.dim(1), latents.dim(2)}) : latents;
  if (z.dim(1) != config_.latent_channels) {
    throw ShapeError("decode: latent has " + std::to_string(z.dim(1)) + " channels, codec expects " +
                     std::to_string(config_.latent_channels));
  }
  const auto& shift = params_.at("codec/latent_shift");
  const auto& scale = params_.at("codec/latent_scale");
  const int c = z.dim(1);
  const std::size_t plane = static_cast<std::size_t>(z.dim(2)) * z.dim(3);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const int ch = static_cast<int>((i / plane) % c);
    z[i] = z[i] / scale[ch] + shift[ch];
  }
  auto tape = Tape<float>::inference(params_);
  Tensor<float> img = decode_raw(tape, config_, constant(z)).value();
  for (auto& v : img.data()) v = std::clamp(v, -1.0f, 1.0f);
  if (single) return img.reshaped({img.dim(1), img.dim(2), img.dim(3)});
  return img;
}

Tensor<float> gather_rows(const Tensor<float>& stacked, std::span<const std::size_t> rows) {
  Shape inner(stacked.shape().begin() + 1, stacked.shape().end());
  const std::size_t per = numel(inner);
  std::vector<float> out;
  out.reserve(rows.size() * per);
  for (std::size_t r : rows) {
    if (r >= static_cast<std::size_t>(stacked.dim(0))) throw ValueError("gather_rows: index out of range");
    auto begin = stacked.vec().begin() + static_cast<std::ptrdiff_t>(r * per);
    out.insert(out.end(), begin, begin + static_cast<std::ptrdiff_t>(per));
  }
  Shape shape{static_cast<int>(rows.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return Tensor<float>(std::move(shape), std::move(out));
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
  return idx;
}

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) throw ShapeError("psnr: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(4.0 / mse);  // peak-to-peak range 2
}

CodecTrainResult train_codec(const Tensor<float>& images, const CodecConfig& config, const CodecTrainConfig& train,
                             const LogSink& log) {
  if (images.rank() != 4 || images.dim(0) == 0) throw ValueError("train_codec: empty dataset");
  if (train.batch_size < 1 || train.epochs < 0) throw ValueError("train_codec: invalid batch size or epochs");
  Rng init_rng(train.seed);
  CodecTrainResult result;
  init_codec(result.params, config, init_rng);
  const std::set<std::string, std::less<>> frozen{"codec/latent_shift", "codec/latent_scale"};
  Adam<float> adam({train.learning_rate});
  Rng order_rng(train.seed ^ 0xC0DECull);
  const std::size_t n = static_cast<std::size_t>(images.dim(0));
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    const auto order = permutation(n, order_rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(train.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(train.batch_size));
      std::span<const std::size_t> rows(order.data() + start, end - start);
      Tensor<float> batch = gather_rows(images, rows);
      Tape<float> tape(result.params, frozen);
      Var<float> x = constant(batch);
      Var<float> loss = ops::mse(decode_raw(tape, config, encode_raw(tape, config, x)), x);
      const double value = loss.value().item();
      if (!std::isfinite(value)) throw RuntimeFailure("train_codec: loss diverged at step " + std::to_string(step));
      total += value * static_cast<double>(rows.size());
      auto grads = backpropagate(loss, result.params);
      adam.step(result.params, grads);
      ++step;
    }
    result.epoch_loss.push_back(total / static_cast<double>(n));
    if (log) log({"codec", static_cast<std::uint64_t>(epoch), result.epoch_loss.back(), train.learning_rate});
  }

  // Per-channel statistics of the raw latents over the training set.
  const int c = config.latent_channels;
  std::vector<double> sum(static_cast<std::size_t>(c), 0.0), sq(static_cast<std::size_t>(c), 0.0);
  double count = 0.0, recon = 0.0;
  for (std::size_t start = 0; start < n; start += 64) {
    const std::size_t end = std::min(n, start + 64);
    std::vector<std::size_t> rows(end - start);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = start + i;
    Tensor<float> batch = gather_rows(images, rows);
    auto tape = Tape<float>::inference(result.params);
    Var<float> z = encode_raw(tape, config, constant(batch));
    Var<float> rec = decode_raw(tape, config, z);
    recon += ops::mse(rec, constant(batch)).value().item() * static_cast<double>(rows.size());
    const std::size_t plane = static_cast<std::size_t>(z.shape()[2]) * z.shape()[3];
    for (std::size_t i = 0; i < z.value().size(); ++i) {
      const auto ch = (i / plane) % static_cast<std::size_t>(c);
      sum[ch] += z.value()[i];
      sq[ch] += static_cast<double>(z.value()[i]) * z.value()[i];
    }
    count += static_cast<double>(rows.size() * plane);
  }
  Tensor<float> shift(Shape{c}), scale(Shape{c});
  for (int ch = 0; ch < c; ++ch) {
    const double mean = sum[ch] / count;
    const double var = std::max(sq[ch] / count - mean * mean, 1e-12);
    shift[ch] = static_cast<float>(mean);
    scale[ch] = static_cast<float>(1.0 / std::sqrt(var));
  }
  result.params.set("codec/latent_shift", shift);
  result.params.set("codec/latent_scale", scale);
  result.final_mse = recon / static_cast<double>(n);
  return result;
}

#define TIDM_INSTANTIATE(R)                                                           \
  template Var<R> encode_raw(Tape<R>&, const CodecConfig&, const Var<R>&);            \
  template Var<R> decode_raw(Tape<R>&, const CodecConfig&, const Var<R>&);

TIDM_INSTANTIATE(float)
TIDM_INSTANTIATE(double)

}  // namespace tidm
