#pragma once

// Automated proxies for judging generations: probe agreement with the
// prompted identities, background consistency across a batch, and codec
// reconstruction PSNR.

#include <optional>
#include <vector>

#include "tidm/codec.hpp"
#include "tidm/probe.hpp"

namespace tidm {

/// Mean over image pairs of the RMS pixel difference restricted to the
/// mask's background pixels. images [B,3,H,W], mask [1,H,W]; B >= 1
/// (a single image scores 0).
double background_consistency(const Tensor<float>& images, const Tensor<float>& mask);

struct GeneratedBatch {
  Tensor<float> images;  // [B,3,24,24]
  /// Identities named by the prompt (-1 = slot not scored).
  int identity_a = -1;
  int identity_b = -1;
  /// Class-prompt batches count toward class_accuracy instead.
  bool class_prompt = false;
  /// Background mask for the consistency metric; empty = skip.
  std::optional<Tensor<float>> mask;
};

struct EvalReport {
  double identity_accuracy = 0.0;
  double identity_accuracy_a = 0.0;
  double identity_accuracy_b = 0.0;
  double class_accuracy = 0.0;
  double background_consistency = 0.0;
  double reconstruction_psnr = 0.0;
  std::size_t identity_samples = 0;
  std::size_t class_samples = 0;
  std::size_t consistency_batches = 0;
  std::size_t psnr_samples = 0;
};

/// Slot-level agreement: (correct slots) / (scored slots).
struct SlotScore {
  double a = 0.0, b = 0.0, mean = 0.0;
  std::size_t images = 0;
};
SlotScore identity_agreement(const ParamStore<float>& probe, const Tensor<float>& images, int identity_a,
                             int identity_b);

/// `reference` images (if given) are round-tripped through `codec` for the
/// PSNR field.
EvalReport evaluate(const ParamStore<float>& probe, const std::vector<GeneratedBatch>& batches,
                    const LatentCodec* codec = nullptr, const Tensor<float>* reference = nullptr);

}  // namespace tidm
