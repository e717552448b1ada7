#pragma once

#include <concepts>
#include <set>
#include <string>

#include "tidm/autograd.hpp"
#include "tidm/param_store.hpp"

namespace tidm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment gradient descent. Moment buffers are created lazily for
/// the parameters that receive an update.
template <std::floating_point Real>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One update of every parameter that has an entry in `grads` (and, when
  /// `trainable` is given, whose name is in it). Increments params.step_count.
  void step(ParamStore<Real>& params, const Gradients<Real>& grads,
            const std::set<std::string, std::less<>>* trainable = nullptr);

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  ParamStore<Real> first_;
  ParamStore<Real> second_;
};

}  // namespace tidm
