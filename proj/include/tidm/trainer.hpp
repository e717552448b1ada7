#pragma once

// Epsilon-prediction objectives and the training loops: base training of
// the text + denoiser parameters, prior-set generation, and subject
// fine-tuning with a prior-preservation term.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tidm/codec.hpp"
#include "tidm/conditioning.hpp"
#include "tidm/dataset.hpp"
#include "tidm/denoiser.hpp"
#include "tidm/metrics_log.hpp"
#include "tidm/schedule.hpp"

namespace tidm {

/// Clean latents with their token ids (batch * L) and optional anchors.
template <std::floating_point Real>
struct DiffusionBatch {
  Tensor<Real> latents;  // [N,C,h,w]
  std::vector<int> tokens;
  std::optional<AnchorInput<Real>> anchor;

  int size() const { return latents.rank() == 0 ? 0 : latents.dim(0); }
};

/// One (t, eps) draw per batch element.
template <std::floating_point Real>
struct NoiseDraw {
  std::vector<int> timesteps;
  Tensor<Real> eps;  // same shape as the latents
};

template <std::floating_point Real>
NoiseDraw<Real> draw_noise(const NoiseSchedule& schedule, const Shape& latent_batch_shape, Rng& rng);

/// Maps (tape, z_t, timesteps, batch) to eps_hat. The default model is the
/// denoiser over the tape's parameters; tests substitute oracles.
template <std::floating_point Real>
using EpsModel =
    std::function<Var<Real>(Tape<Real>&, const Var<Real>&, std::span<const int>, const DiffusionBatch<Real>&)>;

template <std::floating_point Real>
EpsModel<Real> denoiser_model(const DenoiserConfig& config);

/// Per-element mean of w_t * (eps - eps_hat)^2 for a given draw.
template <std::floating_point Real>
Var<Real> diffusion_loss(Tape<Real>& tape, const EpsModel<Real>& model, const NoiseSchedule& schedule,
                         const DiffusionBatch<Real>& batch, const NoiseDraw<Real>& draw);

/// diffusion_loss with a fresh draw from `rng`.
template <std::floating_point Real>
Var<Real> loss_base(Tape<Real>& tape, const EpsModel<Real>& model, const NoiseSchedule& schedule,
                    const DiffusionBatch<Real>& batch, Rng& rng);

/// instance term + lambda * prior term with independent draws. lambda == 0
/// returns the instance term alone.
template <std::floating_point Real>
Var<Real> loss_prior_preservation(Tape<Real>& tape, const EpsModel<Real>& model, const NoiseSchedule& schedule,
                                  const DiffusionBatch<Real>& instance, const NoiseDraw<Real>& instance_draw,
                                  const DiffusionBatch<Real>& prior, const NoiseDraw<Real>& prior_draw, double lambda);

template <std::floating_point Real>
Var<Real> loss_prior_preservation(Tape<Real>& tape, const EpsModel<Real>& model, const NoiseSchedule& schedule,
                                  const DiffusionBatch<Real>& instance, const DiffusionBatch<Real>& prior, double lambda,
                                  Rng& rng);

struct TrainConfig {
  int epochs = 60;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double text_drop_prob = 0.1;
  double anchor_drop_prob = 0.1;
  /// Stop after this many optimizer steps (0 = run all epochs).
  int max_steps = 0;

  void validate() const;
};

struct ModelConfig {
  DenoiserConfig denoiser;
  TextConfig text;
};

struct TrainResult {
  ParamStore<float> params;  // text/ and unet/
  std::vector<double> epoch_loss;
  std::uint64_t steps = 0;
};

/// Base training on the encoded corpus. Each scene's anchor is the latent of
/// another scene from its group (same composition, other identities), drawn
/// per step.
TrainResult train_base(const LatentCodec& codec, const Dataset& data, const Vocabulary& vocab,
                       const NoiseSchedule& schedule, const ModelConfig& model, const TrainConfig& config,
                       const LogSink& log = {});

/// Same loop from existing parameters (used by tests and resumption).
TrainResult train_base_from(ParamStore<float> params, const LatentCodec& codec, const Dataset& data,
                            const Vocabulary& vocab, const NoiseSchedule& schedule, const TrainConfig& config,
                            const LogSink& log = {});

/// n latents [n,C,h,w] from the frozen model under `class_prompt`
/// (guidance 1, `steps` DDIM steps, no anchor); element i uses stream
/// Rng(seed).derive(i).
Tensor<float> generate_prior_set(const ParamStore<float>& params, const Vocabulary& vocab,
                                 const NoiseSchedule& schedule, const std::string& class_prompt, int n,
                                 std::uint64_t seed, const Shape& latent_shape, int steps = 50);

struct DreamboothConfig {
  std::vector<Tensor<float>> instance_images;  // each [3,H,W]
  std::string placeholder = "sks";
  /// Prompt paired with the instance images; must contain the placeholder.
  std::string instance_prompt;
  std::string class_prompt;
  double lambda_prior = 1.0;
  int prior_set_size = 64;
  int steps = 400;
  int prior_batch = 4;
  double learning_rate = 2e-4;
  std::uint64_t seed = 0;
  int sample_steps = 50;
  /// Accept instance counts outside 3..5.
  bool allow_any_instance_count = false;
};

struct DreamboothResult {
  ParamStore<float> params;
  Vocabulary vocab;
  Tensor<float> prior_latents;
  std::vector<double> step_loss;
};

/// Fine-tunes unet/ and the placeholder's embedding row; every other text
/// parameter and the codec stay fixed. Fresh optimizer state.
DreamboothResult finetune_dreambooth(const ParamStore<float>& base, const LatentCodec& codec, Vocabulary vocab,
                                     const NoiseSchedule& schedule, const DreamboothConfig& config,
                                     const LogSink& log = {});

}  // namespace tidm
