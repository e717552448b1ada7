#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "tidm/schedule.hpp"

using namespace tidm;
using test::randn;

TEST_CASE("linear schedule matches a direct product evaluation") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  long double prod = 1.0L;
  for (int t = 0; t < 1000; ++t) {
    const long double beta = 1e-4L + (0.02L - 1e-4L) * t / 999.0L;
    prod *= 1.0L - beta;
    CHECK(std::abs(s.alpha_bars[static_cast<std::size_t>(t)] - static_cast<double>(prod)) < 1e-12);
  }
  CHECK(s.alpha_bars[0] == doctest::Approx(0.9999).epsilon(1e-12));
  CHECK(s.betas.back() == doctest::Approx(0.02).epsilon(1e-12));
  for (double w : s.loss_weights) CHECK(w == 1.0);
}

TEST_CASE("two-step schedule with beta 0.5") {
  const auto s = make_linear_schedule(2, 0.5, 0.5);
  CHECK(s.alpha_bars[0] == 0.5);
  CHECK(s.alpha_bars[1] == 0.25);
}

TEST_CASE("schedule bounds are validated") {
  CHECK_THROWS_AS(make_linear_schedule(1000, 1e-4, 1.0), ValueError);
  CHECK_THROWS_AS(make_linear_schedule(1, 1e-4, 0.02), ValueError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.02, 1e-4), ValueError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), ValueError);
  auto s = make_linear_schedule(4, 0.1, 0.2);
  CHECK_THROWS_AS(set_loss_weights(s, {1, 1, 0, 1}), ValueError);
  CHECK_THROWS_AS(set_loss_weights(s, {1, 1}), ValueError);
}

TEST_CASE("schedule invariants") {
  const auto s = make_linear_schedule();
  for (int t = 0; t < s.steps; ++t) {
    const auto i = static_cast<std::size_t>(t);
    CHECK(s.betas[i] > 0.0);
    CHECK(s.betas[i] < 1.0);
    CHECK(s.alphas[i] == 1.0 - s.betas[i]);
    CHECK(s.alpha_bars[i] > 0.0);
    CHECK(s.alpha_bars[i] < 1.0);
    if (t > 0) {
      CHECK(s.alpha_bars[i] < s.alpha_bars[i - 1]);
      CHECK(s.signal_scale(t) < s.signal_scale(t - 1));
      CHECK(s.noise_scale(t) > s.noise_scale(t - 1));
    }
  }
  CHECK(s.alpha_bar(-1) == 1.0);
}

TEST_CASE("add_noise closed forms") {
  const auto s = make_linear_schedule(2, 0.5, 0.5);
  const Tensor<float> one({1}, 1.0f);
  CHECK(add_noise(s, one, one, 1)[0] == doctest::Approx(0.5 + std::sqrt(0.75)).epsilon(1e-6));
  CHECK(add_noise(s, one, one, 1)[0] == doctest::Approx(1.3660).epsilon(1e-4));
  const auto x0 = randn({2, 3}, 1);
  const auto zero = Tensor<float>({2, 3});
  const auto lin = make_linear_schedule();
  const auto z = add_noise(lin, x0, zero, 500);
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(z[i] == doctest::Approx(std::sqrt(lin.alpha_bars[500]) * x0[i]).epsilon(1e-6));
  CHECK_THROWS_AS(add_noise(lin, x0, zero, 1000), ValueError);
  CHECK_THROWS_AS(add_noise(lin, x0, zero, -1), ValueError);
  CHECK_THROWS_AS(add_noise(lin, x0, Tensor<float>({3, 2}), 3), ShapeError);
}

TEST_CASE("ddim_step inverts add_noise when given the true noise") {
  const auto s = make_linear_schedule();
  for (int t : {0, 17, 250, 999}) {
    const auto x0 = randn({4, 6, 6}, 10 + t);
    const auto eps = randn({4, 6, 6}, 20 + t);
    const auto step = ddim_step(s, add_noise(s, x0, eps, t), eps, t, -1);
    CHECK(max_abs_diff(step.x0_hat, x0) <= 1e-4f);
    CHECK(step.z_prev == step.x0_hat);
    // Same oracle at an interior target lands on add_noise(x0, eps, t_prev).
    if (t > 0) {
      const auto mid = ddim_step(s, add_noise(s, x0, eps, t), eps, t, t / 2);
      CHECK(max_abs_diff(mid.z_prev, add_noise(s, x0, eps, t / 2)) <= 1e-4f);
    }
  }
  const auto z = randn({3}, 5);
  CHECK_THROWS_AS(ddim_step(s, z, z, 10, 10), ValueError);
  CHECK_THROWS_AS(ddim_step(s, z, z, 10, 11), ValueError);
  CHECK_THROWS_AS(ddim_step(s, z, z, 1000, 10), ValueError);
}

TEST_CASE("ddim_step with the true noise recovers x0 in double precision to 1e-10") {
  const auto s = make_linear_schedule();
  const auto x0 = randn<double>({64}, 1);
  const auto eps = randn<double>({64}, 2);
  const auto step = ddim_step(s, add_noise(s, x0, eps, 700), eps, 700, -1);
  CHECK(max_abs_diff(step.x0_hat, x0) <= 1e-10);
}

TEST_CASE("strength_to_start enumerations") {
  const auto s = make_linear_schedule();
  const auto full = strength_to_start(s, 1.0, 50);
  REQUIRE(full.timesteps.size() == 50);
  CHECK(full.timesteps.front() == 980);
  CHECK(full.timesteps.back() == 0);
  for (std::size_t i = 1; i < full.timesteps.size(); ++i) CHECK(full.timesteps[i - 1] - full.timesteps[i] == 20);
  CHECK(full.start == 980);
  const auto none = strength_to_start(s, 0.0, 50);
  CHECK(none.timesteps.empty());
  CHECK_FALSE(none.start.has_value());
  const auto half = strength_to_start(s, 0.5, 50);
  CHECK(half.timesteps.size() == 25);
  CHECK(half.start == 480);
  CHECK(strength_to_start(s, 0.75, 50).timesteps.size() == 37);
  CHECK_THROWS_AS(strength_to_start(s, 0.5, 1001), ValueError);
  CHECK_THROWS_AS(strength_to_start(s, 0.5, 0), ValueError);
  CHECK_THROWS_AS(strength_to_start(s, 1.5, 50), ValueError);
  CHECK_THROWS_AS(strength_to_start(s, -0.1, 50), ValueError);
}

TEST_CASE("lower strengths use a trailing subset of the higher strength steps") {
  const auto s = make_linear_schedule();
  for (int steps : {7, 50, 100}) {
    std::vector<int> prev;
    for (double st = 0.0; st <= 1.0 + 1e-12; st += 0.05) {
      const auto cur = strength_to_start(s, std::min(st, 1.0), steps).timesteps;
      REQUIRE(cur.size() >= prev.size());
      CHECK(std::equal(prev.begin(), prev.end(), cur.end() - static_cast<std::ptrdiff_t>(prev.size())));
      prev = cur;
    }
  }
}

TEST_CASE("round trip holds for random draws") {
  const auto s = make_linear_schedule();
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const int t = static_cast<int>(rng.uniform_int(1000));
    const auto x0 = randn({8}, 100 + trial), eps = randn({8}, 200 + trial);
    CHECK(max_abs_diff(ddim_step(s, add_noise(s, x0, eps, t), eps, t, -1).x0_hat, x0) <= 1e-4f);
  }
}
