// Checks on the models trained by the acceptance run; reads its artifact
// directory and fixtures.txt.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <string>

#include "tidm/checkpoint.hpp"
#include "tidm/codec.hpp"
#include "tidm/dataset.hpp"
#include "tidm/evaluate.hpp"
#include "tidm/probe.hpp"
#include "tidm/sampler.hpp"
#include "tidm/trainer.hpp"

using namespace tidm;

namespace {

const std::string kDir = TIDM_ARTIFACTS;

std::map<std::string, double> load_fixtures() {
  std::map<std::string, double> out;
  std::ifstream in(kDir + "/fixtures.txt");
  REQUIRE(in);
  std::string key, eq;
  double value = 0;
  while (in >> key >> eq >> value) out[key] = value;
  return out;
}

// Renders containing the held-out identity, disjoint in seed from every
// training corpus.
Dataset held_out_renders() {
  DatasetConfig c;
  c.scenes = 400;
  c.seed = 99;
  c.include_held_out = true;
  const auto all = make_dataset(c);
  Dataset out;
  std::vector<Tensor<float>> images, masks;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& s = all.scenes[i];
    if (s.identity_a != c.held_out() && s.identity_b != c.held_out()) continue;
    out.scenes.push_back(s);
    images.push_back(all.images.slice0(static_cast<int>(i)));
    masks.push_back(all.masks.slice0(static_cast<int>(i)));
  }
  out.images = stack<float>(images);
  out.masks = stack<float>(masks);
  return out;
}

double mse(const Tensor<float>& a, const Tensor<float>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::pow(double(a[i]) - b[i], 2);
  return s / static_cast<double>(a.size());
}

// f x f average pooling followed by nearest upsampling.
Tensor<float> pool_baseline(const Tensor<float>& images, int f) {
  Tensor<float> out(images.shape(), 0.0f);
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  for (int i = 0; i < n * c; ++i)
    for (int by = 0; by < h; by += f)
      for (int bx = 0; bx < w; bx += f) {
        double s = 0;
        for (int y = by; y < by + f; ++y)
          for (int x = bx; x < bx + f; ++x) s += images[static_cast<std::size_t>((i * h + y) * w + x)];
        for (int y = by; y < by + f; ++y)
          for (int x = bx; x < bx + f; ++x) out[static_cast<std::size_t>((i * h + y) * w + x)] = static_cast<float>(s / (f * f));
      }
  return out;
}

}  // namespace

TEST_CASE("codec reconstructs held-out renders") {
  const LatentCodec codec(load_checkpoint(kDir + "/codec.ckpt"));
  const auto held = held_out_renders();
  REQUIRE(held.size() > 50);
  const auto rec = codec.decode(codec.encode(held.images));
  const double p = psnr(rec, held.images);
  const double codec_mse = mse(rec, held.images);
  const double base_mse = mse(pool_baseline(held.images, codec.config().factor()), held.images);
  MESSAGE("held-out PSNR " << p << " dB; codec mse " << codec_mse << " vs pooling baseline " << base_mse);
  CHECK(p >= 28.0);
  CHECK(codec_mse <= 0.7 * base_mse);
}

TEST_CASE("probe accuracy") {
  const auto held = held_out_renders();
  const auto labels = labels_of(held);
  const auto probe = load_checkpoint(kDir + "/probe.ckpt");
  const auto acc = probe_accuracy(probe, held.images, labels);
  MESSAGE("probe held-out accuracy left " << acc.left << " right " << acc.right << " background " << acc.background);
  CHECK(acc.left >= 0.95);
  CHECK(acc.right >= 0.95);
  CHECK(acc.background >= 0.95);

  DatasetConfig c;
  c.scenes = 1000;
  c.seed = 98;
  c.include_held_out = true;
  const auto fresh = make_dataset(c);
  const auto chance = probe_accuracy(load_checkpoint(kDir + "/probe_shuffled.ckpt"), fresh.images, labels_of(fresh));
  MESSAGE("shuffled-label probe identity accuracy " << chance.identity());
  CHECK(std::abs(chance.identity() - 1.0 / c.identities) <= 0.05);
}

TEST_CASE("base model") {
  const auto fx = load_fixtures();
  const auto base = load_checkpoint(kDir + "/base.ckpt");
  const auto vocab = Vocabulary::load(kDir + "/vocab.txt");
  CHECK(fx.at("base_final_epoch_loss") < 0.5 * fx.at("base_initial_epoch_loss"));

  SUBCASE("identity embeddings stay distinct") {
    const auto& table = base.at("text/token_embedding");
    const int dim = table.dim(1);
    auto row = [&](int id) { return std::span<const float>(table.data().subspan(static_cast<std::size_t>(id * dim), dim)); };
    double worst = -1;
    for (int a = 0; a < 5; ++a)
      for (int b = a + 1; b < 5; ++b) {
        double dot = 0, na = 0, nb = 0;
        for (int d = 0; d < dim; ++d) {
          dot += double(row(vocab.id("ident" + std::to_string(a)))[d]) * row(vocab.id("ident" + std::to_string(b)))[d];
          na += std::pow(row(vocab.id("ident" + std::to_string(a)))[d], 2);
          nb += std::pow(row(vocab.id("ident" + std::to_string(b)))[d], 2);
        }
        worst = std::max(worst, dot / std::sqrt(na * nb));
      }
    MESSAGE("max identity embedding cosine " << worst);
    CHECK(worst < 0.99);
  }

  SUBCASE("conditioning sensitivity matches the recorded value") {
    const auto model = denoiser_predictor(base);
    const auto ca = make_conditioning(base, vocab, "ident0 meets ident2 in bg1");
    const auto cb = make_conditioning(base, vocab, "ident3 meets ident2 in bg1");
    Rng rng(81);
    const auto z = sample_standard_normal<float>(rng, {4, 4, 6, 6});
    const std::vector<int> ts{100, 400, 700, 900};
    std::vector<Tensor<float>> xa(4, ca.context), xb(4, cb.context);
    const auto ea = model(z, ts, stack<float>(xa), nullptr), eb = model(z, ts, stack<float>(xb), nullptr);
    double s = 0;
    for (std::size_t i = 0; i < ea.size(); ++i) s += std::abs(double(ea[i]) - eb[i]);
    s /= static_cast<double>(ea.size());
    CHECK(s > 0.0);
    CHECK(s == doctest::Approx(fx.at("conditioning_sensitivity")).epsilon(1e-9));
  }

  SUBCASE("prior set") {
    const LatentCodec codec(load_checkpoint(kDir + "/codec.ckpt"));
    const auto probe = load_checkpoint(kDir + "/probe.ckpt");
    const auto schedule = make_linear_schedule();
    const Shape shape = codec.latent_shape(kImageSize, kImageSize);
    const std::string cls = "ident0 meets ident1 in bg0";
    const auto a = generate_prior_set(base, vocab, schedule, cls, 64, 0, shape);
    CHECK(a.shape() == Shape{64, 4, 6, 6});
    CHECK(a == generate_prior_set(base, vocab, schedule, cls, 64, 0, shape));
    const auto score = identity_agreement(probe, codec.decode(a), 0, 1);

    // Conditional accuracy of the same unguided sampler on the prompts used
    // for the training-effectiveness measurement.
    Rng prng(51);
    double conditional = 0;
    for (int k = 0; k < 10; ++k) {
      const int ia = static_cast<int>(prng.uniform_int(5));
      int ib = static_cast<int>(prng.uniform_int(4));
      if (ib >= ia) ++ib;
      const int bg = static_cast<int>(prng.uniform_int(4));
      SamplerConfig sc;
      sc.guidance = 1.0;
      sc.seed = 100 + static_cast<std::uint64_t>(k);
      const auto prompt = "ident" + std::to_string(ia) + " meets ident" + std::to_string(ib) + " in bg" + std::to_string(bg);
      conditional += identity_agreement(probe, generate(codec, base, vocab, schedule, prompt, std::nullopt, sc), ia, ib).mean / 10;
    }
    MESSAGE("prior-set class accuracy " << score.mean << "; unguided conditional accuracy " << conditional
                                        << "; guided (w=7.5) conditional accuracy " << fx.at("conditional_accuracy"));
    CHECK(score.mean >= conditional - 0.05);
  }
}
