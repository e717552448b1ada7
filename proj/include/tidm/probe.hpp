#pragma once

// Small convolutional classifier used as an automated judge: from a 24x24
// scene it predicts the left identity, the right identity and the
// background id.

#include <vector>

#include "tidm/dataset.hpp"
#include "tidm/metrics_log.hpp"
#include "tidm/param_store.hpp"

namespace tidm {

struct ProbeConfig {
  int epochs = 6;
  int batch_size = 32;
  double learning_rate = 2e-3;
  std::uint64_t seed = 0;
  /// Std of Gaussian pixel noise added to training images.
  double noise_std = 0.1;
  /// Permute labels across scenes (chance-level sanity run).
  bool shuffle_labels = false;
};

struct ProbeLabels {
  std::vector<int> left, right, background;
};

ProbeLabels labels_of(const Dataset& data);

struct ProbePrediction {
  int left = 0, right = 0, background = 0;
};

struct ProbeAccuracy {
  double left = 0.0, right = 0.0, background = 0.0;
  double identity() const { return 0.5 * (left + right); }
};

void init_probe(ParamStore<float>& params, int identities, int backgrounds, Rng& rng);

/// images [N,3,24,24] -> one prediction per image.
std::vector<ProbePrediction> probe_predict(const ParamStore<float>& probe, const Tensor<float>& images);

ProbeAccuracy probe_accuracy(const ParamStore<float>& probe, const Tensor<float>& images, const ProbeLabels& labels);

struct ProbeTrainResult {
  ParamStore<float> params;
  std::vector<double> epoch_loss;
  ProbeAccuracy train_accuracy;
};

/// `identities` / `backgrounds` size the heads; labels must fall inside.
ProbeTrainResult train_probe_classifier(const Dataset& data, int identities, int backgrounds,
                                        const ProbeConfig& config, const LogSink& log = {});

}  // namespace tidm
