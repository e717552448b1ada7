#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "tidm/trainer.hpp"

using namespace tidm;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.denoiser.base_channels = 8;
  m.denoiser.blocks = 1;
  m.denoiser.time_embed_dim = 16;
  m.denoiser.context_dim = 8;
  m.text = {8, 8};
  return m;
}

LatentCodec tiny_codec() {
  CodecConfig c;
  c.widths = {8, 8, 8};
  ParamStore<float> p;
  Rng rng(3);
  init_codec(p, c, rng);
  return LatentCodec(p);
}

ParamStore<float> tiny_params(const Vocabulary& vocab, std::uint64_t seed = 1) {
  const auto m = tiny_model();
  ParamStore<float> p;
  Rng r1(seed), r2(seed + 100);
  init_denoiser(p, m.denoiser, r1);
  init_text(p, vocab, m.text, r2);
  return p;
}

// Non-zero output head so the losses depend on the parameters.
void wake(ParamStore<float>& p, std::uint64_t seed = 7) {
  std::vector<std::string> names;
  for (const auto& [name, _] : p)
    if (name.find("conv_out") != std::string::npos || name.find("inject") != std::string::npos) names.push_back(name);
  for (const auto& name : names) p.set(name, test::randn<float>(p.at(name).shape(), seed++, 0.05f));
}

DiffusionBatch<float> make_batch(const Vocabulary& vocab, int n, std::uint64_t seed, bool anchor = true) {
  DiffusionBatch<float> b;
  b.latents = test::randn<float>({n, 4, 6, 6}, seed);
  for (int i = 0; i < n; ++i) {
    const auto ids = vocab.tokenize("ident" + std::to_string(i % 5) + " meets ident1 in bg" + std::to_string(i % 4), 8);
    b.tokens.insert(b.tokens.end(), ids.begin(), ids.end());
  }
  if (anchor) {
    AnchorInput<float> a{test::randn<float>({n, 4, 6, 6}, seed + 1), {}};
    for (int i = 0; i < n; ++i) a.mask.push_back(i % 3 == 0 ? 0.0f : 1.0f);
    b.anchor = std::move(a);
  }
  return b;
}

double loss_value(const ParamStore<float>& p, const DiffusionBatch<float>& b, const NoiseSchedule& s, std::uint64_t seed) {
  auto tape = Tape<float>::inference(p);
  Rng rng(seed);
  return loss_base<float>(tape, denoiser_model<float>(DenoiserConfig::infer(p)), s, b, rng).value().item();
}

Dataset small_data(int scenes = 16) {
  DatasetConfig dc;
  dc.scenes = scenes;
  dc.seed = 4;
  return make_dataset(dc);
}

}  // namespace

TEST_CASE("zero-output denoiser gives unit loss per element") {
  const auto vocab = Vocabulary::grammar(6, 4);
  const auto p = tiny_params(vocab);
  const auto s = make_linear_schedule();
  const auto b = make_batch(vocab, 256, 1);
  const double l = loss_value(p, b, s, 2);
  MESSAGE("initial loss " << l);
  CHECK(std::abs(l - 1.0) <= 0.02);

  // Oracle: with eps_hat = 0 the loss is the mean of the drawn eps squared.
  Rng rng(2);
  const auto draw = draw_noise<double>(s, b.latents.shape(), rng);
  double sq = 0;
  for (double e : draw.eps.data()) sq += e * e;
  CHECK(l == doctest::Approx(sq / static_cast<double>(draw.eps.size())).epsilon(1e-6));
}

TEST_CASE("perfect oracle denoiser has zero loss") {
  const auto vocab = Vocabulary::grammar(6, 4);
  const auto s = make_linear_schedule();
  const auto b = make_batch(vocab, 8, 3, false);
  ParamStore<double> none;
  Rng rng(5);
  const auto draw = draw_noise<double>(s, b.latents.shape(), rng);
  EpsModel<double> oracle = [&](Tape<double>&, const Var<double>&, std::span<const int>, const DiffusionBatch<double>&) {
    return constant(draw.eps);
  };
  Tape<double> tape(none);
  DiffusionBatch<double> bd{b.latents.cast<double>(), b.tokens, std::nullopt};
  CHECK(diffusion_loss(tape, oracle, s, bd, draw).value().item() == 0.0);
}

TEST_CASE("loss determinism and errors") {
  const auto vocab = Vocabulary::grammar(6, 4);
  auto p = tiny_params(vocab);
  wake(p);
  const auto s = make_linear_schedule();
  const auto b = make_batch(vocab, 4, 1);
  CHECK(loss_value(p, b, s, 9) == loss_value(p, b, s, 9));
  CHECK(loss_value(p, b, s, 9) != loss_value(p, b, s, 10));
  DiffusionBatch<float> empty;
  CHECK_THROWS_AS(loss_value(p, empty, s, 1), ValueError);
}

TEST_CASE("prior preservation loss") {
  const auto vocab = Vocabulary::grammar(6, 4);
  auto p = tiny_params(vocab);
  wake(p);
  const auto s = make_linear_schedule();
  const auto model = denoiser_model<float>(DenoiserConfig::infer(p));
  const auto inst = make_batch(vocab, 3, 11, false);
  const auto prior = make_batch(vocab, 4, 12, false);

  auto eval = [&](const DiffusionBatch<float>& pb, double lambda, std::uint64_t seed) {
    auto tape = Tape<float>::inference(p);
    Rng rng(seed);
    return loss_prior_preservation(tape, model, s, inst, pb, lambda, rng).value().item();
  };

  SUBCASE("lambda 0 equals the base loss") { CHECK(eval(prior, 0.0, 21) == loss_value(p, inst, s, 21)); }

  SUBCASE("lambda 1 on the instance batch doubles the base loss") {
    Rng rng(31);
    const auto d = draw_noise<float>(s, inst.latents.shape(), rng);
    auto tape = Tape<float>::inference(p);
    const double base = diffusion_loss(tape, model, s, inst, d).value().item();
    const double both = loss_prior_preservation(tape, model, s, inst, d, inst, d, 1.0).value().item();
    CHECK(both == doctest::Approx(2.0 * base).epsilon(1e-6));
  }

  SUBCASE("affine in lambda for fixed draws") {
    Rng rng(41);
    const auto di = draw_noise<float>(s, inst.latents.shape(), rng);
    const auto dp = draw_noise<float>(s, prior.latents.shape(), rng);
    auto at = [&](double lambda) {
      auto tape = Tape<float>::inference(p);
      return static_cast<double>(loss_prior_preservation(tape, model, s, inst, di, prior, dp, lambda).value().item());
    };
    const double a = at(0.0), b = at(1.0) - a;
    CHECK(a >= 0.0);
    CHECK(b >= 0.0);
    for (double lambda : {0.25, 0.5, 2.0, 3.5}) CHECK(at(lambda) == doctest::Approx(a + lambda * b).epsilon(1e-5));
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(eval(prior, -0.5, 1), ValueError);
    CHECK_THROWS_AS(eval(DiffusionBatch<float>{}, 1.0, 1), ValueError);
    CHECK_NOTHROW(eval(DiffusionBatch<float>{}, 0.0, 1));
  }
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ValueError);
  c = {};
  c.text_drop_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), ValueError);
  c = {};
  c.anchor_drop_prob = -0.1;
  CHECK_THROWS_AS(c.validate(), ValueError);
}

TEST_CASE("base training runs") {
  const auto codec = tiny_codec();
  const auto data = small_data();
  const auto vocab = Vocabulary::grammar(6, 4);
  const auto s = make_linear_schedule();
  const auto model = tiny_model();
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.seed = 5;

  SUBCASE("equal seeds give equal parameters") {
    const auto a = train_base(codec, data, vocab, s, model, c);
    const auto b = train_base(codec, data, vocab, s, model, c);
    CHECK(a.params == b.params);
    CHECK(a.epoch_loss == b.epoch_loss);
    CHECK(a.steps == 4);
    c.seed = 6;
    CHECK_FALSE(train_base(codec, data, vocab, s, model, c).params == a.params);
  }

  SUBCASE("learning rate 0 leaves the loss flat") {
    auto init = tiny_params(vocab);
    wake(init);
    c.learning_rate = 0.0;
    const auto r = train_base_from(init, codec, data, vocab, s, c);
    const auto b = make_batch(vocab, 8, 2);
    CHECK(std::abs(loss_value(r.params, b, s, 3) - loss_value(init, b, s, 3)) <= 1e-7);
    for (const auto& [name, t] : init) CHECK(r.params.at(name) == t);
  }

  SUBCASE("max_steps stops early") {
    c.max_steps = 3;
    CHECK(train_base(codec, data, vocab, s, model, c).steps == 3);
  }

  SUBCASE("divergence aborts with a diagnostic") {
    c.learning_rate = 1e30;
    c.epochs = 4;
    try {
      (void)train_base(codec, data, vocab, s, model, c);
      FAIL("expected RuntimeFailure");
    } catch (const RuntimeFailure& e) {
      CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
    }
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(train_base(codec, Dataset{}, vocab, s, model, c), ValueError);
    auto bad = model;
    bad.denoiser.context_dim = 16;
    CHECK_THROWS_AS(train_base(codec, data, vocab, s, bad, c), ValueError);
  }
}

TEST_CASE("single-example memorisation") {
  const auto codec = tiny_codec();
  const auto data = small_data(1);
  const auto vocab = Vocabulary::grammar(6, 4);
  const auto s = make_linear_schedule();
  TrainConfig c;
  c.epochs = 600;
  c.batch_size = 1;
  c.seed = 2;
  c.text_drop_prob = 0.0;
  c.anchor_drop_prob = 0.0;
  c.learning_rate = 2e-3;
  const auto r = train_base(codec, data, vocab, s, tiny_model(), c);
  auto window = [&](std::size_t from) {
    double m = 0;
    for (std::size_t i = from; i < from + 100; ++i) m += r.epoch_loss[i];
    return m / 100;
  };
  const double first = window(0), last = window(r.epoch_loss.size() - 100);
  MESSAGE("memorisation loss " << first << " -> " << last);
  CHECK(last < 0.25 * first);
}

TEST_CASE("prior set") {
  const auto vocab = Vocabulary::grammar(6, 4);
  auto p = tiny_params(vocab);
  wake(p);
  const auto s = make_linear_schedule();
  const Shape shape{4, 6, 6};
  const auto a = generate_prior_set(p, vocab, s, "ident1 meets ident2 in bg0", 5, 9, shape, 10);
  const auto b = generate_prior_set(p, vocab, s, "ident1 meets ident2 in bg0", 5, 9, shape, 10);
  CHECK(a.shape() == Shape{5, 4, 6, 6});
  CHECK(a == b);
  CHECK_FALSE(a == generate_prior_set(p, vocab, s, "ident1 meets ident2 in bg0", 5, 10, shape, 10));
  CHECK_THROWS_AS(generate_prior_set(p, vocab, s, "ident1", 0, 9, shape, 10), ValueError);
}

TEST_CASE("subject fine-tuning") {
  const auto codec = tiny_codec();
  auto vocab = Vocabulary::grammar(6, 4);
  auto base = tiny_params(vocab);
  wake(base);
  const auto s = make_linear_schedule();
  DatasetConfig dc;
  dc.scenes = 4;
  dc.include_held_out = true;
  const auto data = make_dataset(dc);
  DreamboothConfig c;
  for (int i = 0; i < 4; ++i) c.instance_images.push_back(data.images.slice0(i));
  c.instance_prompt = "sks meets ident1 in bg0";
  c.class_prompt = "ident0 meets ident1 in bg0";
  c.prior_set_size = 4;
  c.prior_batch = 2;
  c.sample_steps = 5;
  c.seed = 3;

  SUBCASE("zero steps returns the input parameters") {
    Rng reg(1);
    auto registered = base;
    register_placeholder(vocab, registered, "sks", reg);
    c.steps = 0;
    const auto r = finetune_dreambooth(registered, codec, vocab, s, c);
    CHECK(r.params == registered);
    CHECK(r.vocab.size() == vocab.size());
  }

  SUBCASE("only the placeholder row and the denoiser move") {
    c.steps = 3;
    const auto r = finetune_dreambooth(base, codec, vocab, s, c);
    const int ph = r.vocab.id("sks");
    CHECK(ph == vocab.size());
    const auto& before = base.at("text/token_embedding");
    const auto& after = r.params.at("text/token_embedding");
    const int dim = after.dim(1);
    for (int row = 0; row < vocab.size(); ++row)
      for (int d = 0; d < dim; ++d)
        CHECK(after[static_cast<std::size_t>(row * dim + d)] == before[static_cast<std::size_t>(row * dim + d)]);
    CHECK(r.params.at("text/position_embedding") == base.at("text/position_embedding"));
    CHECK_FALSE(r.params.at("unet/main/conv_out/weight") == base.at("unet/main/conv_out/weight"));
    CHECK(r.step_loss.size() == 3);
    CHECK(r.prior_latents.shape() == Shape{4, 4, 6, 6});
    const auto again = finetune_dreambooth(base, codec, vocab, s, c);
    CHECK(again.params == r.params);
  }

  SUBCASE("errors") {
    c.steps = 1;
    auto few = c;
    few.instance_images.resize(2);
    CHECK_THROWS_AS(finetune_dreambooth(base, codec, vocab, s, few), ValueError);
    few.allow_any_instance_count = true;
    few.lambda_prior = 0.0;
    CHECK_NOTHROW(finetune_dreambooth(base, codec, vocab, s, few));
    auto wrong = c;
    wrong.instance_images[1] = Tensor<float>(Shape{3, 16, 16}, 0.0f);
    CHECK_THROWS_AS(finetune_dreambooth(base, codec, vocab, s, wrong), ShapeError);
    auto prompt = c;
    prompt.instance_prompt = "ident0 meets ident1";
    CHECK_THROWS_AS(finetune_dreambooth(base, codec, vocab, s, prompt), ValueError);
    auto neg = c;
    neg.lambda_prior = -1.0;
    CHECK_THROWS_AS(finetune_dreambooth(base, codec, vocab, s, neg), ValueError);
  }
}
