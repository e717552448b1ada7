#include "tidm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tidm {

namespace {

template <std::floating_point Real>
Real evaluate(const ScalarFunction<Real>& f, const ParamStore<Real>& params) {
  Tape<Real> tape(params);
  Var<Real> out = f(tape);
  if (out.value().size() != 1) {
    throw ShapeError("finite_difference_check: function must return a scalar, got " + shape_str(out.shape()));
  }
  return out.value().item();
}

}  // namespace

template <std::floating_point Real>
GradCheckReport finite_difference_check(const ScalarFunction<Real>& f, const ParamStore<Real>& params,
                                        const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ValueError("finite_difference_check: step must be positive");
  Gradients<Real> analytic;
  {
    Tape<Real> tape(params);
    Var<Real> loss = f(tape);
    if (loss.value().size() != 1) {
      throw ShapeError("finite_difference_check: function must return a scalar, got " + shape_str(loss.shape()));
    }
    analytic = backpropagate(loss, params);
  }
  const Real h = static_cast<Real>(options.step);
  ParamStore<Real> probe = params;
  Rng rng(options.seed);
  GradCheckReport report;
  for (const auto& [name, value] : params) {
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.coords_per_param && static_cast<std::size_t>(*options.coords_per_param) < coords.size()) {
      // Partial Fisher-Yates with the counter-based stream.
      const auto take = static_cast<std::size_t>(*options.coords_per_param);
      for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + rng.uniform_int(coords.size() - i);
        std::swap(coords[i], coords[j]);
      }
      coords.resize(take);
    }
    double worst = 0.0;
    for (std::size_t c : coords) {
      Real& slot = probe.at(name)[c];
      const Real original = slot;
      slot = original + h;
      const Real up = evaluate(f, probe);
      slot = original - h;
      const Real down = evaluate(f, probe);
      slot = original;
      const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * static_cast<double>(h));
      const double exact = static_cast<double>(analytic.at(name)[c]);
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(exact - numeric) / denom);
      ++report.coordinates;
    }
    report.per_param[name] = worst;
    if (worst >= report.max_rel_error) {
      report.max_rel_error = worst;
      report.worst_param = name;
    }
  }
  return report;
}

template GradCheckReport finite_difference_check(const ScalarFunction<float>&, const ParamStore<float>&,
                                                 const GradCheckOptions&);
template GradCheckReport finite_difference_check(const ScalarFunction<double>&, const ParamStore<double>&,
                                                 const GradCheckOptions&);

}  // namespace tidm
