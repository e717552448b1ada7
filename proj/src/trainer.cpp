#include "tidm/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "tidm/ops.hpp"
#include "tidm/optim.hpp"
#include "tidm/sampler.hpp"

namespace tidm {

namespace {

constexpr std::uint64_t kOrderStream = 0x9E3779B97F4A7C15ull;
constexpr std::uint64_t kInitStream = 0xA5A5A5A500000000ull;
constexpr std::uint64_t kFinetuneStepBase = 1ull << 32;
constexpr std::uint64_t kRegisterStream = 1ull << 33;

std::vector<int> repeat_tokens(const std::vector<int>& ids, int n) {
  std::vector<int> out;
  out.reserve(ids.size() * static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.insert(out.end(), ids.begin(), ids.end());
  return out;
}

Tensor<float> encode_all(const LatentCodec& codec, const Tensor<float>& images) {
  const int n = images.dim(0);
  std::vector<Tensor<float>> parts;
  for (int start = 0; start < n; start += 256) {
    std::vector<std::size_t> rows;
    for (int i = start; i < std::min(n, start + 256); ++i) rows.push_back(static_cast<std::size_t>(i));
    Tensor<float> z = codec.encode(gather_rows(images, rows));
    for (int i = 0; i < z.dim(0); ++i) parts.push_back(z.slice0(i));
  }
  return stack<float>(parts);
}

}  // namespace

template <std::floating_point Real>
NoiseDraw<Real> draw_noise(const NoiseSchedule& schedule, const Shape& shape, Rng& rng) {
  if (shape.empty() || shape[0] < 1) throw ValueError("draw_noise: empty batch");
  NoiseDraw<Real> d;
  for (int i = 0; i < shape[0]; ++i) d.timesteps.push_back(static_cast<int>(rng.uniform_int(schedule.steps)));
  d.eps = sample_standard_normal<Real>(rng, shape);
  return d;
}

template <std::floating_point Real>
EpsModel<Real> denoiser_model(const DenoiserConfig& config) {
  return [config](Tape<Real>& tape, const Var<Real>& z_t, std::span<const int> timesteps,
                  const DiffusionBatch<Real>& batch) {
    Var<Real> context = embed(tape, batch.tokens, batch.size());
    return predict_noise(tape, config, z_t, timesteps, context, batch.anchor ? &*batch.anchor : nullptr);
  };
}

template <std::floating_point Real>
Var<Real> diffusion_loss(Tape<Real>& tape, const EpsModel<Real>& model, const NoiseSchedule& schedule,
                         const DiffusionBatch<Real>& batch, const NoiseDraw<Real>& draw) {
  if (batch.size() < 1) throw ValueError("diffusion loss: empty batch");
  if (draw.eps.shape() != batch.latents.shape() || static_cast<int>(draw.timesteps.size()) != batch.size()) {
    throw ShapeError("diffusion loss: noise draw does not match batch " + shape_str(batch.latents.shape()));
  }
  Var<Real> z_t = constant(add_noise_batch(schedule, batch.latents, draw.eps, draw.timesteps));
  Var<Real> eps_hat = model(tape, z_t, draw.timesteps, batch);
  std::vector<Real> weights;
  for (int t : draw.timesteps) weights.push_back(static_cast<Real>(schedule.loss_weights.at(static_cast<std::size_t>(t))));
  return ops::weighted_mse(eps_hat, constant(draw.eps), std::span<const Real>(weights));
}

template <std::floating_point Real>
Var<Real> loss_base(Tape<Real>& tape, const EpsModel<Real>& model, const NoiseSchedule& schedule,
                    const DiffusionBatch<Real>& batch, Rng& rng) {
  if (batch.size() < 1) throw ValueError("loss_base: empty batch");
  return diffusion_loss(tape, model, schedule, batch, draw_noise<Real>(schedule, batch.latents.shape(), rng));
}

template <std::floating_point Real>
Var<Real> loss_prior_preservation(Tape<Real>& tape, const EpsModel<Real>& model, const NoiseSchedule& schedule,
                                  const DiffusionBatch<Real>& instance, const NoiseDraw<Real>& instance_draw,
                                  const DiffusionBatch<Real>& prior, const NoiseDraw<Real>& prior_draw,
                                  double lambda) {
  if (!(lambda >= 0.0)) throw ValueError("loss_prior_preservation: lambda must be >= 0");
  Var<Real> li = diffusion_loss(tape, model, schedule, instance, instance_draw);
  if (lambda == 0.0) return li;
  if (prior.size() < 1) throw ValueError("loss_prior_preservation: empty prior batch with lambda > 0");
  Var<Real> lp = diffusion_loss(tape, model, schedule, prior, prior_draw);
  return ops::add(li, ops::scale(lp, static_cast<Real>(lambda)));
}

template <std::floating_point Real>
Var<Real> loss_prior_preservation(Tape<Real>& tape, const EpsModel<Real>& model, const NoiseSchedule& schedule,
                                  const DiffusionBatch<Real>& instance, const DiffusionBatch<Real>& prior,
                                  double lambda, Rng& rng) {
  if (!(lambda >= 0.0)) throw ValueError("loss_prior_preservation: lambda must be >= 0");
  if (instance.size() < 1) throw ValueError("loss_prior_preservation: empty instance batch");
  NoiseDraw<Real> di = draw_noise<Real>(schedule, instance.latents.shape(), rng);
  if (lambda == 0.0) return loss_prior_preservation(tape, model, schedule, instance, di, prior, NoiseDraw<Real>{}, 0.0);
  if (prior.size() < 1) throw ValueError("loss_prior_preservation: empty prior batch with lambda > 0");
  NoiseDraw<Real> dp = draw_noise<Real>(schedule, prior.latents.shape(), rng);
  return loss_prior_preservation(tape, model, schedule, instance, di, prior, dp, lambda);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValueError("train: batch_size must be >= 1");
  if (epochs < 0 || max_steps < 0) throw ValueError("train: epochs and max_steps must be >= 0");
  if (!(learning_rate >= 0.0)) throw ValueError("train: learning rate must be >= 0");
  for (double p : {text_drop_prob, anchor_drop_prob})
    if (!(p >= 0.0 && p <= 1.0)) throw ValueError("train: drop probabilities must be in [0, 1]");
}

TrainResult train_base(const LatentCodec& codec, const Dataset& data, const Vocabulary& vocab,
                       const NoiseSchedule& schedule, const ModelConfig& model, const TrainConfig& config,
                       const LogSink& log) {
  config.validate();
  if (model.denoiser.latent_channels != codec.config().latent_channels) {
    throw ValueError("train_base: denoiser latent channels differ from the codec's");
  }
  if (model.denoiser.context_dim != model.text.embed_dim) {
    throw ValueError("train_base: denoiser context_dim must equal the text embed_dim");
  }
  model.denoiser.validate(codec.latent_shape(kImageSize, kImageSize)[1]);
  ParamStore<float> params;
  Rng root(config.seed ^ kInitStream);
  Rng unet_rng = root.derive(1);
  Rng text_rng = root.derive(2);
  init_denoiser(params, model.denoiser, unet_rng);
  init_text(params, vocab, model.text, text_rng);
  return train_base_from(std::move(params), codec, data, vocab, schedule, config, log);
}

TrainResult train_base_from(ParamStore<float> params, const LatentCodec& codec, const Dataset& data,
                            const Vocabulary& vocab, const NoiseSchedule& schedule, const TrainConfig& config,
                            const LogSink& log) {
  config.validate();
  if (data.size() == 0) throw ValueError("train_base: empty dataset");
  const DenoiserConfig dconf = DenoiserConfig::infer(params);
  const int length = infer_text_config(params).length;
  const Tensor<float> latents = encode_all(codec, data.images);

  std::vector<std::vector<int>> tokens;
  std::vector<std::vector<std::size_t>> siblings;
  for (std::size_t i = 0; i < data.size(); ++i) {
    tokens.push_back(vocab.tokenize(data.scenes[i].caption(), length));
    siblings.push_back(group_siblings(data, i));
  }
  const std::vector<int> null_tokens = vocab.null_tokens(length);

  const EpsModel<float> model = denoiser_model<float>(dconf);
  Adam<float> adam({config.learning_rate});
  TrainResult result;
  Rng order_rng(config.seed ^ kOrderStream);
  const Rng step_root(config.seed);
  const std::size_t n = data.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.max_steps > 0 && result.steps >= static_cast<std::uint64_t>(config.max_steps)) break;
    const auto order = permutation(n, order_rng);
    double total = 0.0;
    int count = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      if (config.max_steps > 0 && result.steps >= static_cast<std::uint64_t>(config.max_steps)) break;
      Rng rng = step_root.derive(result.steps);
      const std::size_t end = std::min(n, start + batch);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<std::size_t> anchor_rows;
      DiffusionBatch<float> b;
      AnchorInput<float> anchor;
      for (std::size_t r : rows) {
        const bool drop_text = rng.uniform() < config.text_drop_prob;
        const auto& sib = siblings[r];
        anchor_rows.push_back(sib.empty() ? r : sib[rng.uniform_int(sib.size())]);
        const bool drop_anchor = rng.uniform() < config.anchor_drop_prob;
        const auto& ids = drop_text ? null_tokens : tokens[r];
        b.tokens.insert(b.tokens.end(), ids.begin(), ids.end());
        anchor.mask.push_back(drop_anchor ? 0.0f : 1.0f);
      }
      b.latents = gather_rows(latents, rows);
      if (dconf.two_stream) {
        anchor.latents = gather_rows(latents, anchor_rows);
        b.anchor = std::move(anchor);
      }
      const auto diverged = [&](const std::string& detail) {
        return RuntimeFailure("train_base: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                              std::to_string(result.steps) + " (try a lower learning rate)" + detail);
      };
      double value = 0.0;
      try {
        Tape<float> tape(params);
        Var<float> loss = loss_base(tape, model, schedule, b, rng);
        value = loss.value().item();
        if (!std::isfinite(value)) throw diverged("");
        adam.step(params, backpropagate(loss, params));
      } catch (const NonFiniteError& e) {
        throw diverged(std::string(": ") + e.what());
      }
      total += value;
      ++count;
      ++result.steps;
    }
    if (count == 0) break;
    result.epoch_loss.push_back(total / count);
    if (log) log({"base", static_cast<std::uint64_t>(epoch), result.epoch_loss.back(), config.learning_rate});
  }
  result.params = std::move(params);
  return result;
}

Tensor<float> generate_prior_set(const ParamStore<float>& params, const Vocabulary& vocab,
                                 const NoiseSchedule& schedule, const std::string& class_prompt, int n,
                                 std::uint64_t seed, const Shape& latent_shape, int steps) {
  if (n <= 0) throw ValueError("generate_prior_set: n must be positive, got " + std::to_string(n));
  SamplerConfig sc;
  sc.steps = steps;
  sc.guidance = 1.0;
  sc.batch = n;
  sc.seed = seed;
  return ddim_sample(denoiser_predictor(params), schedule, make_conditioning(params, vocab, class_prompt), sc,
                     latent_shape);
}

DreamboothResult finetune_dreambooth(const ParamStore<float>& base, const LatentCodec& codec, Vocabulary vocab,
                                     const NoiseSchedule& schedule, const DreamboothConfig& config,
                                     const LogSink& log) {
  const auto count = config.instance_images.size();
  if (count == 0) throw ValueError("finetune: no instance images");
  if (!config.allow_any_instance_count && (count < 3 || count > 5)) {
    throw ValueError("finetune: expected 3 to 5 instance images, got " + std::to_string(count) +
                     " (set allow_any_instance_count to override)");
  }
  for (const auto& img : config.instance_images) {
    if (img.shape() != config.instance_images.front().shape() || img.rank() != 3 || img.dim(0) != 3) {
      throw ShapeError("finetune: instance images must all be [3,H,W] of one size, got " + shape_str(img.shape()));
    }
  }
  if (!(config.lambda_prior >= 0.0)) throw ValueError("finetune: lambda_prior must be >= 0");
  if (config.steps < 0) throw ValueError("finetune: steps must be >= 0");
  if (config.prior_set_size < 1 || config.prior_batch < 1) throw ValueError("finetune: prior sizes must be >= 1");

  DreamboothResult result{base, std::move(vocab), Tensor<float>(), {}};
  ParamStore<float>& params = result.params;
  const Rng root(config.seed);
  if (!result.vocab.contains(config.placeholder)) {
    Rng reg = root.derive(kRegisterStream);
    register_placeholder(result.vocab, params, config.placeholder, reg);
  }
  const int placeholder = result.vocab.id(config.placeholder);
  const int length = infer_text_config(params).length;
  const std::vector<int> instance_ids = result.vocab.tokenize(config.instance_prompt, length);
  if (std::find(instance_ids.begin(), instance_ids.end(), placeholder) == instance_ids.end()) {
    throw ValueError("finetune: instance prompt '" + config.instance_prompt + "' must contain '" +
                     config.placeholder + "'");
  }
  const std::vector<int> class_ids = result.vocab.tokenize(config.class_prompt, length);

  const Tensor<float> instance_latents = codec.encode(stack<float>(config.instance_images));
  const Shape latent_shape(instance_latents.shape().begin() + 1, instance_latents.shape().end());
  if (config.steps == 0) return result;

  if (config.lambda_prior > 0.0) {
    result.prior_latents = generate_prior_set(params, result.vocab, schedule, config.class_prompt,
                                              config.prior_set_size, config.seed, latent_shape, config.sample_steps);
  }

  const DenoiserConfig dconf = DenoiserConfig::infer(params);
  const EpsModel<float> model = denoiser_model<float>(dconf);
  std::set<std::string, std::less<>> trainable{"text/token_embedding"};
  for (const auto& [name, t] : params)
    if (name.rfind("unet/", 0) == 0) trainable.insert(name);
  const std::set<std::string, std::less<>> frozen{"text/position_embedding"};
  Adam<float> adam({config.learning_rate});
  const int dim = params.at("text/token_embedding").dim(1);

  DiffusionBatch<float> instance{instance_latents, repeat_tokens(instance_ids, static_cast<int>(count)), std::nullopt};
  for (int step = 0; step < config.steps; ++step) {
    Rng rng = root.derive(kFinetuneStepBase + static_cast<std::uint64_t>(step));
    DiffusionBatch<float> prior;
    if (config.lambda_prior > 0.0) {
      std::vector<std::size_t> rows;
      for (int i = 0; i < config.prior_batch; ++i) {
        rows.push_back(rng.uniform_int(static_cast<std::uint64_t>(config.prior_set_size)));
      }
      prior.latents = gather_rows(result.prior_latents, rows);
      prior.tokens = repeat_tokens(class_ids, config.prior_batch);
    }
    Tape<float> tape(params, frozen);
    double value = 0.0;
    Gradients<float> grads;
    try {
      Var<float> loss = loss_prior_preservation(tape, model, schedule, instance, prior, config.lambda_prior, rng);
      value = loss.value().item();
      if (!std::isfinite(value)) throw NonFiniteError("loss is " + std::to_string(value));
      grads = backpropagate(loss, params);
    } catch (const NonFiniteError& e) {
      throw RuntimeFailure("finetune: non-finite loss at step " + std::to_string(step) + ": " + e.what());
    }
    auto& table_grad = grads.at("text/token_embedding");
    for (int row = 0; row < table_grad.dim(0); ++row) {
      if (row == placeholder) continue;
      std::fill_n(table_grad.data().begin() + static_cast<std::ptrdiff_t>(row) * dim, dim, 0.0f);
    }
    adam.step(params, grads, &trainable);
    result.step_loss.push_back(value);
    if (log) log({"finetune", static_cast<std::uint64_t>(step), value, config.learning_rate});
  }
  return result;
}

#define TIDM_INSTANTIATE(R)                                                                                       \
  template NoiseDraw<R> draw_noise<R>(const NoiseSchedule&, const Shape&, Rng&);                                  \
  template EpsModel<R> denoiser_model<R>(const DenoiserConfig&);                                                  \
  template Var<R> diffusion_loss(Tape<R>&, const EpsModel<R>&, const NoiseSchedule&, const DiffusionBatch<R>&,    \
                                 const NoiseDraw<R>&);                                                            \
  template Var<R> loss_base(Tape<R>&, const EpsModel<R>&, const NoiseSchedule&, const DiffusionBatch<R>&, Rng&);  \
  template Var<R> loss_prior_preservation(Tape<R>&, const EpsModel<R>&, const NoiseSchedule&,                     \
                                          const DiffusionBatch<R>&, const NoiseDraw<R>&, const DiffusionBatch<R>&, \
                                          const NoiseDraw<R>&, double);                                           \
  template Var<R> loss_prior_preservation(Tape<R>&, const EpsModel<R>&, const NoiseSchedule&,                     \
                                          const DiffusionBatch<R>&, const DiffusionBatch<R>&, double, Rng&);

TIDM_INSTANTIATE(float)
TIDM_INSTANTIATE(double)

}  // namespace tidm
