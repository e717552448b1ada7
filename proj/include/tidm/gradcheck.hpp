#pragma once

#include <concepts>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tidm/autograd.hpp"
#include "tidm/rng.hpp"

namespace tidm {

struct GradCheckOptions {
  double step = 1e-3;
  /// When set, only this many randomly chosen coordinates per parameter are probed.
  std::optional<int> coords_per_param;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::map<std::string, double> per_param;
  std::size_t coordinates = 0;
};

template <std::floating_point Real>
using ScalarFunction = std::function<Var<Real>(Tape<Real>&)>;

/// Central differences per coordinate against backpropagate(). Relative
/// error uses max(|analytic|, |numeric|, 1e-8) as denominator.
template <std::floating_point Real>
GradCheckReport finite_difference_check(const ScalarFunction<Real>& f, const ParamStore<Real>& params,
                                        const GradCheckOptions& options = {});

}  // namespace tidm

namespace tidm {

inline constexpr double kGradCheckTolerance = 1e-3;

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
};

/// Float64 finite-difference checks of every differentiable op, the layer
/// blocks, and the base / prior-preservation losses on the smallest
/// denoiser. `full` probes every coordinate of the model losses instead of
/// a sample per parameter.
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 0, bool full = false);

}  // namespace tidm
