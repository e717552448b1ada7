#include "tidm/sampler.hpp"

#include <algorithm>

namespace tidm {

namespace {

Tensor<float> repeat(const Tensor<float>& item, int n) {
  std::vector<Tensor<float>> items(static_cast<std::size_t>(n), item);
  return stack<float>(items);
}

Tensor<float> concat0(const Tensor<float>& a, const Tensor<float>& b) {
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<float> data = a.vec();
  data.insert(data.end(), b.vec().begin(), b.vec().end());
  return Tensor<float>(std::move(shape), std::move(data));
}

Tensor<float> rows(const Tensor<float>& t, int begin, int count) {
  Shape shape = t.shape();
  const std::size_t per = t.size() / static_cast<std::size_t>(shape[0]);
  shape[0] = count;
  auto first = t.vec().begin() + static_cast<std::ptrdiff_t>(per * begin);
  return Tensor<float>(std::move(shape), std::vector<float>(first, first + static_cast<std::ptrdiff_t>(per * count)));
}

void validate(const NoiseSchedule& schedule, const SampleConditioning& cond, const SamplerConfig& config,
              const Shape& latent_shape) {
  if (config.steps < 1 || config.steps > schedule.steps) {
    throw ValueError("sampler: steps must be in [1, " + std::to_string(schedule.steps) + "], got " +
                     std::to_string(config.steps));
  }
  if (!(config.guidance >= 0.0)) throw ValueError("sampler: guidance scale must be >= 0");
  if (config.batch < 1) throw ValueError("sampler: batch must be >= 1");
  const double s = config.resolved_strength(cond.anchor.has_value());
  if (!(s >= 0.0 && s <= 1.0)) throw ValueError("sampler: strength must be in [0, 1]");
  if (!cond.anchor && s < 1.0) throw ValueError("sampler: strength < 1 requires an anchor image");
  if (cond.anchor && cond.anchor->shape() != latent_shape) {
    throw ShapeError("sampler: anchor latent " + shape_str(cond.anchor->shape()) + " does not match model latent " +
                     shape_str(latent_shape));
  }
  if (cond.context.rank() != 2 || cond.context.shape() != cond.null_context.shape()) {
    throw ShapeError("sampler: prompt and null embeddings must both be [L,E]");
  }
}

Tensor<float> sample_streams(const NoisePredictor& model, const NoiseSchedule& schedule, const SampleConditioning& cond,
                             const SamplerConfig& config, const Shape& latent_shape, std::vector<Rng> streams) {
  validate(schedule, cond, config, latent_shape);
  const int n = static_cast<int>(streams.size());
  std::vector<int> timesteps;
  if (cond.anchor) {
    timesteps = strength_to_start(schedule, config.resolved_strength(true), config.steps).timesteps;
    if (timesteps.empty()) return repeat(*cond.anchor, n);
  } else {
    timesteps = ddim_timesteps(schedule, config.steps);
  }

  std::vector<Tensor<float>> init(streams.size());
  for (std::size_t i = 0; i < streams.size(); ++i) {
    Tensor<float> eps = sample_standard_normal<float>(streams[i], latent_shape);
    init[i] = cond.anchor ? add_noise(schedule, *cond.anchor, eps, timesteps.front()) : eps;
  }
  Tensor<float> z = stack<float>(init);
  const Tensor<float> context = repeat(cond.context, n);
  const Tensor<float> null_context = repeat(cond.null_context, n);
  std::optional<AnchorInput<float>> anchor;
  if (cond.anchor) anchor = AnchorInput<float>{repeat(*cond.anchor, n), std::vector<float>(streams.size(), 1.0f)};

  for (std::size_t k = 0; k < timesteps.size(); ++k) {
    const int t = timesteps[k];
    const int t_prev = k + 1 < timesteps.size() ? timesteps[k + 1] : -1;
    const std::vector<int> ts(streams.size(), t);
    Tensor<float> eps = guided_eps(model, z, ts, context, null_context, anchor ? &*anchor : nullptr, config.guidance);
    z = ddim_step(schedule, z, eps, t, t_prev).z_prev;
  }
  return z;
}

}  // namespace

NoisePredictor denoiser_predictor(const ParamStore<float>& params) {
  const DenoiserConfig config = DenoiserConfig::infer(params);
  return [&params, config](const Tensor<float>& z, std::span<const int> timesteps, const Tensor<float>& context,
                           const AnchorInput<float>* anchor) {
    auto tape = Tape<float>::inference(params);
    return predict_noise(tape, config, constant(z), timesteps, constant(context), anchor).value();
  };
}

Tensor<float> guided_eps(const NoisePredictor& model, const Tensor<float>& z, std::span<const int> timesteps,
                         const Tensor<float>& context, const Tensor<float>& null_context,
                         const AnchorInput<float>* anchor, double guidance) {
  if (guidance == 1.0) return model(z, timesteps, context, anchor);
  if (guidance == 0.0) return model(z, timesteps, null_context, anchor);

  // Both branches in one batch: [cond; uncond].
  const int n = z.dim(0);
  std::vector<int> ts2(timesteps.begin(), timesteps.end());
  ts2.insert(ts2.end(), timesteps.begin(), timesteps.end());
  std::optional<AnchorInput<float>> anchor2;
  if (anchor) {
    std::vector<float> mask = anchor->mask;
    mask.insert(mask.end(), anchor->mask.begin(), anchor->mask.end());
    anchor2 = AnchorInput<float>{concat0(anchor->latents, anchor->latents), std::move(mask)};
  }
  const Tensor<float> both = model(concat0(z, z), ts2, concat0(context, null_context), anchor2 ? &*anchor2 : nullptr);
  const Tensor<float> cond = rows(both, 0, n);
  const Tensor<float> uncond = rows(both, n, n);
  Tensor<float> out(z.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = uncond[i];
    out[i] = static_cast<float>(u + guidance * (static_cast<double>(cond[i]) - u));
  }
  require_finite(out, "guided_eps");
  return out;
}

Tensor<float> ddim_sample(const NoisePredictor& model, const NoiseSchedule& schedule, const SampleConditioning& cond,
                          const SamplerConfig& config, const Shape& latent_shape) {
  if (config.batch < 1) throw ValueError("sampler: batch must be >= 1");
  const Rng root(config.seed);
  std::vector<Rng> streams;
  for (int i = 0; i < config.batch; ++i) streams.push_back(root.derive(static_cast<std::uint64_t>(i)));
  return sample_streams(model, schedule, cond, config, latent_shape, std::move(streams));
}

Tensor<float> ddim_sample_one(const NoisePredictor& model, const NoiseSchedule& schedule,
                              const SampleConditioning& cond, const SamplerConfig& config, const Shape& latent_shape,
                              Rng stream) {
  Tensor<float> z = sample_streams(model, schedule, cond, config, latent_shape, {stream});
  return z.slice0(0);
}

SampleConditioning make_conditioning(const ParamStore<float>& params, const Vocabulary& vocab,
                                     const std::string& prompt, std::optional<Tensor<float>> anchor_latent) {
  const int length = infer_text_config(params).length;
  return {embed_tokens(params, vocab.tokenize(prompt, length)), embed_tokens(params, vocab.null_tokens(length)),
          std::move(anchor_latent)};
}

Tensor<float> generate(const LatentCodec& codec, const ParamStore<float>& params, const Vocabulary& vocab,
                       const NoiseSchedule& schedule, const std::string& prompt,
                       const std::optional<Tensor<float>>& anchor_image, const SamplerConfig& config) {
  std::optional<Tensor<float>> anchor_latent;
  int height = kGenerateSize, width = kGenerateSize;
  if (anchor_image) {
    if (anchor_image->rank() != 3) throw ShapeError("generate: anchor image must be [3,H,W]");
    height = anchor_image->dim(1);
    width = anchor_image->dim(2);
    anchor_latent = codec.encode(*anchor_image);
  }
  const SampleConditioning cond = make_conditioning(params, vocab, prompt, std::move(anchor_latent));
  const Tensor<float> z = ddim_sample(denoiser_predictor(params), schedule, cond, config, codec.latent_shape(height, width));
  return codec.decode(z);
}

}  // namespace tidm
