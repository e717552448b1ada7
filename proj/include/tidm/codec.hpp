#pragma once

// Deterministic convolutional autoencoder between RGB images in [-1, 1] and
// a compact latent space. Encoder: strided-conv residual stages; decoder:
// nearest-neighbour upsampling stages. Latents leaving encode() are
// normalised per channel with constants fitted once after training.

#include <set>
#include <span>
#include <vector>

#include "tidm/autograd.hpp"
#include "tidm/metrics_log.hpp"
#include "tidm/rng.hpp"

namespace tidm {

struct CodecConfig {
  int image_channels = 3;
  int latent_channels = 4;
  /// Channel width per resolution level; the downsampling factor is 2^(levels-1).
  std::vector<int> widths{16, 32, 64};

  int factor() const { return 1 << (static_cast<int>(widths.size()) - 1); }
  void validate() const;
  /// Reads the architecture back from the parameter shapes.
  static CodecConfig infer(const ParamStore<float>& params);
};

void init_codec(ParamStore<float>& params, const CodecConfig& config, Rng& rng);

/// Unnormalised encoder output, [N,latent,H/f,W/f].
template <std::floating_point Real>
Var<Real> encode_raw(Tape<Real>& tape, const CodecConfig& config, const Var<Real>& images);
/// Decoder without the final clamp, for training.
template <std::floating_point Real>
Var<Real> decode_raw(Tape<Real>& tape, const CodecConfig& config, const Var<Real>& latents);

class LatentCodec {
 public:
  LatentCodec(ParamStore<float> params);  // NOLINT: codec params define the config

  const CodecConfig& config() const { return config_; }
  const ParamStore<float>& params() const { return params_; }

  /// Images [N,3,H,W] (or [3,H,W]) -> normalised latents of matching rank.
  Tensor<float> encode(const Tensor<float>& images) const;
  /// Normalised latents -> images clamped to [-1, 1].
  Tensor<float> decode(const Tensor<float>& latents) const;
  Shape latent_shape(int height, int width) const;

 private:
  CodecConfig config_;
  ParamStore<float> params_;
};

struct CodecTrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 2e-3;
  std::uint64_t seed = 0;
};

struct CodecTrainResult {
  ParamStore<float> params;
  std::vector<double> epoch_loss;
  double final_mse = 0.0;
};

/// Minimises pixel MSE over `images` [N,3,H,W], then fits the per-channel
/// latent normalisation (`codec/latent_shift`, `codec/latent_scale`).
CodecTrainResult train_codec(const Tensor<float>& images, const CodecConfig& config, const CodecTrainConfig& train,
                             const LogSink& log = {});

/// Batch of items [idx...] from a stacked tensor [N, ...].
Tensor<float> gather_rows(const Tensor<float>& stacked, std::span<const std::size_t> rows);

/// Random permutation of 0..n-1 drawn from `rng`.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

double psnr(const Tensor<float>& a, const Tensor<float>& b);

}  // namespace tidm
