#include "tidm/optim.hpp"

#include <cmath>

namespace tidm {

template <std::floating_point Real>
void Adam<Real>::step(ParamStore<Real>& params, const Gradients<Real>& grads,
                      const std::set<std::string, std::less<>>* trainable) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  const Real b1 = static_cast<Real>(config_.beta1);
  const Real b2 = static_cast<Real>(config_.beta2);
  const Real lr = static_cast<Real>(config_.learning_rate);
  const Real eps = static_cast<Real>(config_.epsilon);
  for (const auto& [name, g] : grads) {
    if (trainable && !trainable->contains(name)) continue;
    if (!params.contains(name)) continue;
    Tensor<Real>& p = params.at(name);
    if (p.shape() != g.shape()) {
      throw ShapeError("adam: gradient " + shape_str(g.shape()) + " for parameter " + name + " " +
                       shape_str(p.shape()));
    }
    if (!first_.contains(name)) {
      first_.set(name, Tensor<Real>(p.shape()));
      second_.set(name, Tensor<Real>(p.shape()));
    }
    auto m = first_.at(name).data();
    auto v = second_.at(name).data();
    auto pv = p.data();
    auto gv = g.data();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      m[i] = b1 * m[i] + (Real{1} - b1) * gv[i];
      v[i] = b2 * v[i] + (Real{1} - b2) * gv[i] * gv[i];
      const Real mhat = m[i] / static_cast<Real>(bc1);
      const Real vhat = v[i] / static_cast<Real>(bc2);
      pv[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    require_finite(p, "adam");
  }
  ++params.step_count;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace tidm
