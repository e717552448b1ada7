#pragma once

// Two-stream conditional U-Net predicting the noise in a latent.
//
// Main stream: conv_in, down levels of residual (+ cross-attention) blocks,
// a middle block, up levels with skip concatenation, zero-initialised
// conv_out. The anchor stream mirrors the main down path on the clean anchor
// latent; each of its skip-position features goes through a zero-initialised
// 1x1 projection and is added to the matching main-stream feature.

#include <optional>
#include <span>
#include <vector>

#include "tidm/autograd.hpp"
#include "tidm/rng.hpp"

namespace tidm {

struct DenoiserConfig {
  int latent_channels = 4;
  int base_channels = 32;
  std::vector<int> channel_mult{1, 2};
  int blocks = 2;
  /// Level indices (0 = full latent resolution) that get cross-attention.
  std::vector<int> attention_levels{0, 1};
  int time_embed_dim = 128;
  int context_dim = 64;
  bool two_stream = true;

  int levels() const { return static_cast<int>(channel_mult.size()); }
  int channels(int level) const { return base_channels * channel_mult[static_cast<std::size_t>(level)]; }
  bool has_attention(int level) const;
  /// Throws when the config is inconsistent, or when `latent_size` (if
  /// given) cannot be halved down to the lowest level.
  void validate(std::optional<int> latent_size = std::nullopt) const;
  static DenoiserConfig infer(const ParamStore<float>& params);
};

void init_denoiser(ParamStore<float>& params, const DenoiserConfig& config, Rng& rng);

/// [sin(t f_0..f_{d/2-1}), cos(t f_0..)] with f_i = 10000^(-i/(d/2)).
template <std::floating_point Real>
std::vector<Real> time_embedding(int t, int dim);

/// Anchor input for a batch: clean latents [N,C,h,w] and a 0/1 flag per
/// sample (0 = dropped, the injections contribute nothing).
template <std::floating_point Real>
struct AnchorInput {
  Tensor<Real> latents;
  std::vector<Real> mask;
};

/// eps_hat for z_t [N,C,h,w] at per-sample timesteps, text context
/// [N,L,E]. Without an anchor the anchor stream is not evaluated.
template <std::floating_point Real>
Var<Real> predict_noise(Tape<Real>& tape, const DenoiserConfig& config, const Var<Real>& z, std::span<const int> timesteps,
                        const Var<Real>& context, const AnchorInput<Real>* anchor = nullptr);

}  // namespace tidm
