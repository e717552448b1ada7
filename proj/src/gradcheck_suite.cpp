#include <cmath>

#include "tidm/conditioning.hpp"
#include "tidm/denoiser.hpp"
#include "tidm/gradcheck.hpp"
#include "tidm/layers.hpp"
#include "tidm/ops.hpp"
#include "tidm/schedule.hpp"
#include "tidm/trainer.hpp"

namespace tidm {

namespace {

using D = double;

constexpr double kStep = 1e-4;

Tensor<D> normal(Rng& rng, const Shape& shape, double scale = 1.0) {
  Tensor<D> t = sample_standard_normal<D>(rng, shape);
  for (auto& v : t.data()) v *= scale;
  return t;
}

// Contracts an op output with a fixed random tensor so every output
// element contributes a distinct weight to the scalar.
Var<D> project(const Var<D>& out, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(out, constant(normal(rng, out.shape()))));
}

struct Suite {
  std::uint64_t seed;
  bool full;
  std::vector<GradCheckCase> cases;

  void run(const std::string& name, const ParamStore<D>& params, const ScalarFunction<D>& f,
           std::optional<int> coords = std::nullopt) {
    GradCheckOptions opt;
    opt.step = kStep;
    opt.seed = seed;
    if (!full) opt.coords_per_param = coords;
    cases.push_back({name, finite_difference_check<D>(f, params, opt)});
  }
};

ParamStore<D> jitter(const ParamStore<float>& p, Rng& rng, double scale) {
  ParamStore<D> out = p.cast<D>();
  for (const auto& [name, t] : p) {
    Tensor<D>& v = out.at(name);
    const Tensor<D> n = normal(rng, t.shape(), scale);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += n[i];
  }
  return out;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, bool full) {
  Suite s{seed, full, {}};
  Rng rng(seed);
  auto fresh = [&](std::initializer_list<std::pair<const char*, Shape>> entries, double scale = 1.0) {
    ParamStore<D> p;
    for (const auto& [name, shape] : entries) p.set(name, normal(rng, shape, scale));
    return p;
  };
  const std::uint64_t pj = seed + 101;

  {
    auto p = fresh({{"a", {2, 3, 4}}, {"b", {2, 3, 4}}});
    s.run("add", p, [&](Tape<D>& t) { return project(ops::add(t.param("a"), t.param("b")), pj); });
    s.run("sub", p, [&](Tape<D>& t) { return project(ops::sub(t.param("a"), t.param("b")), pj); });
    s.run("mul", p, [&](Tape<D>& t) { return project(ops::mul(t.param("a"), t.param("b")), pj); });
    s.run("scale", p, [&](Tape<D>& t) { return project(ops::scale(t.param("a"), 0.37), pj); });
    s.run("silu", p, [&](Tape<D>& t) { return project(ops::silu(t.param("a")), pj); });
    s.run("reshape", p, [&](Tape<D>& t) { return project(ops::reshape(t.param("a"), {6, 4}), pj); });
    s.run("sum", p, [&](Tape<D>& t) { return ops::sum(ops::mul(t.param("a"), t.param("b"))); });
    s.run("mean", p, [&](Tape<D>& t) { return ops::mean(ops::mul(t.param("a"), t.param("a"))); });
    s.run("mse", p, [&](Tape<D>& t) { return ops::mse(t.param("a"), t.param("b")); });
    const std::vector<D> w{0.5, 2.0};
    s.run("weighted_mse", p, [&](Tape<D>& t) {
      return ops::weighted_mse(t.param("a"), t.param("b"), std::span<const D>(w));
    });
  }
  {
    auto p = fresh({{"logits", {5, 4}}});
    const std::vector<int> labels{0, 3, 1, 1, 2};
    s.run("cross_entropy", p, [&](Tape<D>& t) {
      return ops::cross_entropy(t.param("logits"), std::span<const int>(labels));
    });
  }
  {
    auto p = fresh({{"x", {2, 3, 6, 6}}, {"w", {4, 3, 3, 3}}, {"bias", {4}}}, 0.5);
    s.run("conv2d", p, [&](Tape<D>& t) {
      return project(ops::conv2d(t.param("x"), t.param("w"), t.param("bias"), {1, 1}), pj);
    });
    s.run("conv2d_stride2", p, [&](Tape<D>& t) {
      return project(ops::conv2d(t.param("x"), t.param("w"), t.param("bias"), {2, 1}), pj);
    });
    s.run("conv2d_nobias", p, [&](Tape<D>& t) {
      return project(ops::conv2d(t.param("x"), t.param("w"), Var<D>{}, {1, 0}), pj);
    });
  }
  {
    auto p = fresh({{"x", {2, 3, 5}}, {"w", {4, 5}}, {"bias", {4}}});
    s.run("linear", p, [&](Tape<D>& t) { return project(ops::linear(t.param("x"), t.param("w"), t.param("bias")), pj); });
  }
  {
    auto p = fresh({{"x", {2, 4, 3, 3}}, {"gamma", {4}}, {"beta", {4}}});
    s.run("group_norm", p, [&](Tape<D>& t) {
      return project(ops::group_norm(t.param("x"), t.param("gamma"), t.param("beta"), 2), pj);
    });
  }
  {
    auto p = fresh({{"q", {2, 5, 4}}, {"k", {2, 3, 4}}, {"v", {2, 3, 6}}});
    s.run("attention", p, [&](Tape<D>& t) { return project(ops::attention(t.param("q"), t.param("k"), t.param("v")), pj); });
  }
  {
    auto p = fresh({{"x", {2, 3, 2, 2}}, {"y", {2, 2, 2, 2}}, {"v", {2, 3}}, {"e", {3, 2, 2}}});
    s.run("upsample_nearest2x", p, [&](Tape<D>& t) { return project(ops::upsample_nearest2x(t.param("x")), pj); });
    s.run("concat_channels", p, [&](Tape<D>& t) { return project(ops::concat_channels(t.param("x"), t.param("y")), pj); });
    s.run("to_tokens", p, [&](Tape<D>& t) { return project(ops::to_tokens(t.param("x")), pj); });
    s.run("from_tokens", p, [&](Tape<D>& t) {
      return project(ops::from_tokens(ops::reshape(t.param("x"), {2, 4, 3}), 2, 2), pj);
    });
    s.run("add_channel_bias", p, [&](Tape<D>& t) { return project(ops::add_channel_bias(t.param("x"), t.param("v")), pj); });
    const std::vector<D> mask{1.0, 0.0};
    s.run("scale_per_sample", p, [&](Tape<D>& t) {
      return project(ops::scale_per_sample(t.param("x"), std::span<const D>(mask)), pj);
    });
    s.run("add_broadcast_leading", p, [&](Tape<D>& t) {
      return project(ops::add_broadcast_leading(t.param("x"), t.param("e")), pj);
    });
  }
  {
    auto p = fresh({{"table", {5, 3}}});
    const std::vector<int> ids{0, 4, 4, 2, 1, 0};
    s.run("embedding", p, [&](Tape<D>& t) {
      return project(ops::embedding(t.param("table"), std::span<const int>(ids), 2, 3), pj);
    });
  }

  // Layer blocks on random (non-zero-initialised) weights.
  {
    ParamStore<float> init;
    Rng irng = rng.derive(7);
    layers::init_resblock(init, "res", 4, 8, 6, irng);
    layers::init_cross_attention(init, "attn", 8, 5, irng);
    ParamStore<D> p = jitter(init, irng, 0.1);
    p.set("x", normal(rng, {2, 4, 4, 4}));
    p.set("time", normal(rng, {2, 6}));
    p.set("ctx", normal(rng, {2, 3, 5}));
    s.run("resblock", p, [&](Tape<D>& t) { return project(layers::resblock(t, "res", t.param("x"), t.param("time")), pj); },
          6);
    s.run("cross_attention", p, [&](Tape<D>& t) {
      Var<D> h = layers::resblock(t, "res", t.param("x"), t.param("time"));
      return project(layers::cross_attention(t, "attn", h, t.param("ctx")), pj);
    }, 6);
  }

  // Full objectives on the smallest model.
  {
    DenoiserConfig dc;
    dc.base_channels = 8;
    dc.channel_mult = {1, 2};
    dc.blocks = 1;
    dc.attention_levels = {0, 1};
    dc.time_embed_dim = 16;
    dc.context_dim = 8;
    const auto vocab = Vocabulary::grammar(3, 2);
    TextConfig tc{4, 8};
    ParamStore<float> init;
    Rng irng = rng.derive(9);
    init_text(init, vocab, tc, irng);
    init_denoiser(init, dc, irng);
    // Zero-initialised output and injection layers would leave most
    // gradients identically zero, so perturb every entry.
    const ParamStore<D> p = jitter(init, irng, 0.05);
    const NoiseSchedule sched = make_linear_schedule();
    const EpsModel<D> model = denoiser_model<D>(dc);

    auto make_batch = [&](const std::string& prompt, bool with_anchor) {
      DiffusionBatch<D> b;
      b.latents = normal(rng, {2, 4, 4, 4});
      for (int i = 0; i < 2; ++i) {
        auto ids = vocab.tokenize(prompt, tc.length);
        b.tokens.insert(b.tokens.end(), ids.begin(), ids.end());
      }
      if (with_anchor) b.anchor = AnchorInput<D>{normal(rng, {2, 4, 4, 4}), {1.0, 0.0}};
      return b;
    };
    const auto inst = make_batch("ident0 meets ident1 in bg0", true);
    const auto prior = make_batch("ident2 with ident1 in bg1", false);
    Rng drng = rng.derive(11);
    const auto inst_draw = draw_noise<D>(sched, inst.latents.shape(), drng);
    const auto prior_draw = draw_noise<D>(sched, prior.latents.shape(), drng);
    const int coords = 4;
    s.run("loss_base", p, [&](Tape<D>& t) { return diffusion_loss(t, model, sched, inst, inst_draw); }, coords);
    s.run("loss_prior_preservation", p, [&](Tape<D>& t) {
      return loss_prior_preservation(t, model, sched, inst, inst_draw, prior, prior_draw, 1.0);
    }, coords);
  }
  return s.cases;
}

}  // namespace tidm
