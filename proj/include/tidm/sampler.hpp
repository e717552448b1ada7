#pragma once

// Deterministic DDIM sampling with classifier-free guidance and optional
// anchor initialisation / anchor-stream conditioning.

#include <functional>
#include <optional>
#include <span>
#include <string>

#include "tidm/codec.hpp"
#include "tidm/conditioning.hpp"
#include "tidm/denoiser.hpp"
#include "tidm/schedule.hpp"

namespace tidm {

/// Image side used when no anchor fixes the size.
inline constexpr int kGenerateSize = 24;

/// eps_hat for z [N,C,h,w] at per-sample timesteps, context [N,L,E], and an
/// optional anchor (mask all ones when present).
using NoisePredictor = std::function<Tensor<float>(const Tensor<float>& z, std::span<const int> timesteps,
                                                   const Tensor<float>& context, const AnchorInput<float>* anchor)>;

/// Predictor backed by a parameter store holding unet/ and text/. Keeps a
/// reference to `params`.
NoisePredictor denoiser_predictor(const ParamStore<float>& params);

struct SamplerConfig {
  int steps = 50;
  double guidance = 7.5;
  /// Defaults to 1.0 without an anchor and 0.75 with one.
  std::optional<double> strength;
  int batch = 4;
  std::uint64_t seed = 0;

  double resolved_strength(bool has_anchor) const { return strength.value_or(has_anchor ? 0.75 : 1.0); }
};

struct SampleConditioning {
  Tensor<float> context;       // [L,E] prompt embedding
  Tensor<float> null_context;  // [L,E] <null> embedding
  std::optional<Tensor<float>> anchor;  // [C,h,w] clean anchor latent
};

/// eps_uncond + w (eps_cond - eps_uncond); w == 1 and w == 0 evaluate only
/// the branch that survives.
Tensor<float> guided_eps(const NoisePredictor& model, const Tensor<float>& z, std::span<const int> timesteps,
                         const Tensor<float>& context, const Tensor<float>& null_context,
                         const AnchorInput<float>* anchor, double guidance);

/// Batch of latents [B,C,h,w]; element i draws its noise from
/// Rng(seed).derive(i).
Tensor<float> ddim_sample(const NoisePredictor& model, const NoiseSchedule& schedule, const SampleConditioning& cond,
                          const SamplerConfig& config, const Shape& latent_shape);

/// Single element with an explicit stream -> [C,h,w].
Tensor<float> ddim_sample_one(const NoisePredictor& model, const NoiseSchedule& schedule,
                              const SampleConditioning& cond, const SamplerConfig& config, const Shape& latent_shape,
                              Rng stream);

SampleConditioning make_conditioning(const ParamStore<float>& params, const Vocabulary& vocab,
                                     const std::string& prompt, std::optional<Tensor<float>> anchor_latent = {});

/// Prompt (+ optional anchor image [3,H,W]) -> images [B,3,H,W] in [-1,1].
Tensor<float> generate(const LatentCodec& codec, const ParamStore<float>& params, const Vocabulary& vocab,
                       const NoiseSchedule& schedule, const std::string& prompt,
                       const std::optional<Tensor<float>>& anchor_image, const SamplerConfig& config);

}  // namespace tidm
