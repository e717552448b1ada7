// Serial reference kernels vs the OpenMP kernels at denoiser-sized shapes.
#include <benchmark/benchmark.h>

#include <vector>

#include "tidm/kernels.hpp"
#include "tidm/rng.hpp"

namespace {

using namespace tidm;
namespace k = tidm::kernels;

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_standard_normal<float>(rng, {static_cast<int>(n)}).vec();
}

k::ConvGeometry conv_geom(const benchmark::State& state) {
  k::ConvGeometry g;
  g.batch = static_cast<int>(state.range(0));
  g.in_channels = 32;
  g.out_channels = 32;
  g.height = g.width = 6;
  g.kernel = 3;
  g.padding = 1;
  return g;
}

template <bool Parallel>
void conv_forward(benchmark::State& state) {
  const auto g = conv_geom(state);
  const auto x = noise(static_cast<std::size_t>(g.batch * g.in_channels * g.height * g.width), 1);
  const auto w = noise(static_cast<std::size_t>(g.out_channels * g.patch()), 2);
  const auto b = noise(static_cast<std::size_t>(g.out_channels), 3);
  for (auto _ : state) {
    auto y = Parallel ? k::conv2d_forward<float>(g, x, w, b) : k::reference::conv2d_forward<float>(g, x, w, b);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * g.batch);
}

template <bool Parallel>
void conv_backward(benchmark::State& state) {
  const auto g = conv_geom(state);
  const auto x = noise(static_cast<std::size_t>(g.batch * g.in_channels * g.height * g.width), 1);
  const auto w = noise(static_cast<std::size_t>(g.out_channels * g.patch()), 2);
  const auto dy = noise(static_cast<std::size_t>(g.batch * g.out_channels * g.out_height() * g.out_width()), 3);
  for (auto _ : state) {
    auto r = Parallel ? k::conv2d_backward<float>(g, x, w, dy, true, true)
                      : k::reference::conv2d_backward<float>(g, x, w, dy, true, true);
    benchmark::DoNotOptimize(r.dw.data());
  }
  state.SetItemsProcessed(state.iterations() * g.batch);
}

template <bool Parallel>
void attention_forward(benchmark::State& state) {
  k::AttentionGeometry g{static_cast<int>(state.range(0)), 36, 8, 32, 32};
  const auto q = noise(static_cast<std::size_t>(g.batch * g.queries * g.dim), 1);
  const auto kk = noise(static_cast<std::size_t>(g.batch * g.keys * g.dim), 2);
  const auto v = noise(static_cast<std::size_t>(g.batch * g.keys * g.value_dim), 3);
  for (auto _ : state) {
    auto r = Parallel ? k::attention_forward<float>(g, q, kk, v) : k::reference::attention_forward<float>(g, q, kk, v);
    benchmark::DoNotOptimize(r.out.data());
  }
  state.SetItemsProcessed(state.iterations() * g.batch);
}

template <bool Parallel>
void group_norm_forward(benchmark::State& state) {
  k::NormGeometry g{static_cast<int>(state.range(0)), 64, 36, 8};
  const auto x = noise(static_cast<std::size_t>(g.batch * g.channels * g.spatial), 1);
  const std::vector<float> gamma(64, 1.0f), beta(64, 0.0f);
  for (auto _ : state) {
    auto r = Parallel ? k::group_norm_forward<float>(g, x, gamma, beta, 1e-5f)
                      : k::reference::group_norm_forward<float>(g, x, gamma, beta, 1e-5f);
    benchmark::DoNotOptimize(r.y.data());
  }
  state.SetItemsProcessed(state.iterations() * g.batch);
}

template <bool Parallel>
void linear_forward(benchmark::State& state) {
  k::LinearGeometry g{static_cast<int>(state.range(0)), 36, 64, 64};
  const auto x = noise(static_cast<std::size_t>(g.batch * g.rows * g.in_features), 1);
  const auto w = noise(static_cast<std::size_t>(g.out_features * g.in_features), 2);
  const auto b = noise(static_cast<std::size_t>(g.out_features), 3);
  for (auto _ : state) {
    auto y = Parallel ? k::linear_forward<float>(g, x, w, b) : k::reference::linear_forward<float>(g, x, w, b);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * g.batch);
}

}  // namespace

BENCHMARK(conv_forward<false>)->Name("conv2d_forward/reference")->Arg(1)->Arg(32);
BENCHMARK(conv_forward<true>)->Name("conv2d_forward/openmp")->Arg(1)->Arg(32);
BENCHMARK(conv_backward<false>)->Name("conv2d_backward/reference")->Arg(1)->Arg(32);
BENCHMARK(conv_backward<true>)->Name("conv2d_backward/openmp")->Arg(1)->Arg(32);
BENCHMARK(attention_forward<false>)->Name("attention_forward/reference")->Arg(1)->Arg(32);
BENCHMARK(attention_forward<true>)->Name("attention_forward/openmp")->Arg(1)->Arg(32);
BENCHMARK(group_norm_forward<false>)->Name("group_norm_forward/reference")->Arg(1)->Arg(32);
BENCHMARK(group_norm_forward<true>)->Name("group_norm_forward/openmp")->Arg(1)->Arg(32);
BENCHMARK(linear_forward<false>)->Name("linear_forward/reference")->Arg(1)->Arg(32);
BENCHMARK(linear_forward<true>)->Name("linear_forward/openmp")->Arg(1)->Arg(32);

BENCHMARK_MAIN();
