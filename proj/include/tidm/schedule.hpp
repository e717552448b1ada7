#pragma once

#include <optional>
#include <vector>

#include "tidm/tensor.hpp"

namespace tidm {

/// Variance-preserving diffusion coefficients over T steps, indexed 0..T-1.
/// The noising map is z_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<double> loss_weights;

  /// abar_t, with t == -1 meaning the terminal (noise-free) state abar = 1.
  double alpha_bar(int t) const;
  double signal_scale(int t) const;  // sqrt(abar_t)
  double noise_scale(int t) const;   // sqrt(1 - abar_t)
};

inline constexpr int kDefaultTrainSteps = 1000;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

/// Betas linearly spaced from beta_start to beta_end inclusive; w_t = 1.
NoiseSchedule make_linear_schedule(int steps = kDefaultTrainSteps, double beta_start = kDefaultBetaStart,
                                   double beta_end = kDefaultBetaEnd);

/// Replaces the per-step loss weights (all must be positive).
void set_loss_weights(NoiseSchedule& schedule, std::vector<double> weights);

template <std::floating_point Real>
Tensor<Real> add_noise(const NoiseSchedule& schedule, const Tensor<Real>& x0, const Tensor<Real>& eps, int t);

/// Batched form: x0 and eps are [N, ...], one timestep per element.
template <std::floating_point Real>
Tensor<Real> add_noise_batch(const NoiseSchedule& schedule, const Tensor<Real>& x0, const Tensor<Real>& eps,
                             std::span<const int> timesteps);

template <std::floating_point Real>
struct DdimStep {
  Tensor<Real> z_prev;
  Tensor<Real> x0_hat;
};

/// Deterministic (eta = 0) update from t to t_prev; t_prev == -1 is the terminal step.
template <std::floating_point Real>
DdimStep<Real> ddim_step(const NoiseSchedule& schedule, const Tensor<Real>& z_t, const Tensor<Real>& eps_hat, int t,
                         int t_prev);

/// Evenly strided S-step subsequence {0, T/S, 2T/S, ...}, returned descending.
std::vector<int> ddim_timesteps(const NoiseSchedule& schedule, int steps);

struct StrengthPlan {
  std::optional<int> start;  // empty when no step is run
  std::vector<int> timesteps;  // descending
};

/// The trailing floor(strength * S) steps of the S-step subsequence.
StrengthPlan strength_to_start(const NoiseSchedule& schedule, double strength, int steps);

}  // namespace tidm
