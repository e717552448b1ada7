#include "tidm/schedule.hpp"

#include <cmath>
#include <string>

namespace tidm {

double NoiseSchedule::alpha_bar(int t) const {
  if (t == -1) return 1.0;
  if (t < 0 || t >= steps) {
    throw ValueError("schedule: timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps) + ")");
  }
  return alpha_bars[static_cast<std::size_t>(t)];
}

double NoiseSchedule::signal_scale(int t) const { return std::sqrt(alpha_bar(t)); }
double NoiseSchedule::noise_scale(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw ValueError("make_linear_schedule: need at least 2 steps, got " + std::to_string(steps));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ValueError("make_linear_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.betas.resize(static_cast<std::size_t>(steps));
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  s.loss_weights.assign(s.betas.size(), 1.0);
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double beta = beta_start + (beta_end - beta_start) * static_cast<double>(t) / (steps - 1);
    s.betas[t] = beta;
    s.alphas[t] = 1.0 - beta;
    prod *= s.alphas[t];
    s.alpha_bars[t] = prod;
  }
  return s;
}

void set_loss_weights(NoiseSchedule& schedule, std::vector<double> weights) {
  if (static_cast<int>(weights.size()) != schedule.steps) {
    throw ValueError("set_loss_weights: expected " + std::to_string(schedule.steps) + " weights");
  }
  for (double w : weights)
    if (!(w > 0.0)) throw ValueError("set_loss_weights: weights must be positive");
  schedule.loss_weights = std::move(weights);
}

template <std::floating_point Real>
Tensor<Real> add_noise(const NoiseSchedule& schedule, const Tensor<Real>& x0, const Tensor<Real>& eps, int t) {
  if (t < 0 || t >= schedule.steps) {
    throw ValueError("add_noise: timestep " + std::to_string(t) + " outside [0, " + std::to_string(schedule.steps) +
                     ")");
  }
  if (x0.shape() != eps.shape()) {
    throw ShapeError("add_noise: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
  }
  const Real a = static_cast<Real>(schedule.signal_scale(t));
  const Real s = static_cast<Real>(schedule.noise_scale(t));
  Tensor<Real> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * eps[i];
  return out;
}

template <std::floating_point Real>
Tensor<Real> add_noise_batch(const NoiseSchedule& schedule, const Tensor<Real>& x0, const Tensor<Real>& eps,
                             std::span<const int> timesteps) {
  if (x0.shape() != eps.shape()) {
    throw ShapeError("add_noise: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
  }
  if (x0.rank() == 0 || static_cast<int>(timesteps.size()) != x0.shape()[0]) {
    throw ShapeError("add_noise: " + std::to_string(timesteps.size()) + " timesteps for batch " +
                     shape_str(x0.shape()));
  }
  const std::size_t per = x0.size() / timesteps.size();
  Tensor<Real> out(x0.shape());
  for (std::size_t n = 0; n < timesteps.size(); ++n) {
    const int t = timesteps[n];
    if (t < 0 || t >= schedule.steps) throw ValueError("add_noise: timestep " + std::to_string(t) + " out of range");
    const Real a = static_cast<Real>(schedule.signal_scale(t));
    const Real s = static_cast<Real>(schedule.noise_scale(t));
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) out[i] = a * x0[i] + s * eps[i];
  }
  return out;
}

template <std::floating_point Real>
DdimStep<Real> ddim_step(const NoiseSchedule& schedule, const Tensor<Real>& z_t, const Tensor<Real>& eps_hat, int t,
                         int t_prev) {
  if (t < 0 || t >= schedule.steps) throw ValueError("ddim_step: timestep " + std::to_string(t) + " out of range");
  if (t_prev >= t || t_prev < -1) {
    throw ValueError("ddim_step: need t > t_prev >= -1, got t=" + std::to_string(t) +
                     " t_prev=" + std::to_string(t_prev));
  }
  if (z_t.shape() != eps_hat.shape()) {
    throw ShapeError("ddim_step: z_t " + shape_str(z_t.shape()) + " vs eps " + shape_str(eps_hat.shape()));
  }
  const double a_t = schedule.signal_scale(t);
  const double s_t = schedule.noise_scale(t);
  DdimStep<Real> out{Tensor<Real>(z_t.shape()), Tensor<Real>(z_t.shape())};
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    out.x0_hat[i] = static_cast<Real>((static_cast<double>(z_t[i]) - s_t * eps_hat[i]) / a_t);
  }
  if (t_prev == -1) {
    out.z_prev = out.x0_hat;
  } else {
    const double a_p = schedule.signal_scale(t_prev);
    const double s_p = schedule.noise_scale(t_prev);
    for (std::size_t i = 0; i < z_t.size(); ++i) {
      out.z_prev[i] = static_cast<Real>(a_p * out.x0_hat[i] + s_p * eps_hat[i]);
    }
  }
  require_finite(out.z_prev, "ddim_step");
  return out;
}

std::vector<int> ddim_timesteps(const NoiseSchedule& schedule, int steps) {
  if (steps < 1 || steps > schedule.steps) {
    throw ValueError("ddim: steps must be in [1, " + std::to_string(schedule.steps) + "], got " +
                     std::to_string(steps));
  }
  const int stride = schedule.steps / steps;
  std::vector<int> out(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) out[k] = (steps - 1 - k) * stride;
  return out;
}

StrengthPlan strength_to_start(const NoiseSchedule& schedule, double strength, int steps) {
  if (!(strength >= 0.0 && strength <= 1.0)) throw ValueError("strength must be in [0, 1]");
  const auto full = ddim_timesteps(schedule, steps);
  // Small slack so that e.g. 0.29 * 100 counts as 29 steps.
  const int run = static_cast<int>(std::floor(strength * steps + 1e-9));
  StrengthPlan plan;
  plan.timesteps.assign(full.end() - run, full.end());
  if (!plan.timesteps.empty()) plan.start = plan.timesteps.front();
  return plan;
}

template Tensor<float> add_noise(const NoiseSchedule&, const Tensor<float>&, const Tensor<float>&, int);
template Tensor<double> add_noise(const NoiseSchedule&, const Tensor<double>&, const Tensor<double>&, int);
template Tensor<float> add_noise_batch(const NoiseSchedule&, const Tensor<float>&, const Tensor<float>&,
                                       std::span<const int>);
template Tensor<double> add_noise_batch(const NoiseSchedule&, const Tensor<double>&, const Tensor<double>&,
                                        std::span<const int>);
template DdimStep<float> ddim_step(const NoiseSchedule&, const Tensor<float>&, const Tensor<float>&, int, int);
template DdimStep<double> ddim_step(const NoiseSchedule&, const Tensor<double>&, const Tensor<double>&, int, int);

}  // namespace tidm
