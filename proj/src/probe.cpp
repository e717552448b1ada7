#include "tidm/probe.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "tidm/codec.hpp"
#include "tidm/layers.hpp"
#include "tidm/optim.hpp"

namespace tidm {

namespace {

struct Logits {
  Var<float> left, right, background;
};

Logits probe_forward(Tape<float>& tape, const Var<float>& images) {
  Var<float> h = ops::silu(layers::conv(tape, "probe/conv1", images));
  h = ops::silu(layers::conv(tape, "probe/conv2", h, 2));
  h = ops::silu(layers::conv(tape, "probe/conv3", h, 2));
  const Shape& s = h.shape();
  h = ops::reshape(h, {s[0], s[1] * s[2] * s[3]});
  h = ops::silu(layers::dense(tape, "probe/hidden", h));
  return {layers::dense(tape, "probe/left", h), layers::dense(tape, "probe/right", h),
          layers::dense(tape, "probe/background", h)};
}

std::vector<int> argmax_rows(const Tensor<float>& logits) {
  const int n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto row = logits.data().subspan(static_cast<std::size_t>(i) * c, static_cast<std::size_t>(c));
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

template <typename T>
std::vector<T> pick(const std::vector<T>& v, std::span<const std::size_t> rows) {
  std::vector<T> out;
  for (auto r : rows) out.push_back(v[r]);
  return out;
}

}  // namespace

ProbeLabels labels_of(const Dataset& data) {
  ProbeLabels l;
  for (const auto& s : data.scenes) {
    l.left.push_back(s.identity_a);
    l.right.push_back(s.identity_b);
    l.background.push_back(s.variant.background);
  }
  return l;
}

void init_probe(ParamStore<float>& p, int identities, int backgrounds, Rng& rng) {
  if (identities < 2 || backgrounds < 2) throw ValueError("probe: need at least two classes per head");
  layers::init_conv(p, "probe/conv1", 3, 16, 3, rng);
  layers::init_conv(p, "probe/conv2", 16, 32, 3, rng);
  layers::init_conv(p, "probe/conv3", 32, 32, 3, rng);
  layers::init_linear(p, "probe/hidden", 32 * 6 * 6, 64, rng);
  layers::init_linear(p, "probe/left", 64, identities, rng);
  layers::init_linear(p, "probe/right", 64, identities, rng);
  layers::init_linear(p, "probe/background", 64, backgrounds, rng);
}

std::vector<ProbePrediction> probe_predict(const ParamStore<float>& probe, const Tensor<float>& images) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != kImageSize || images.dim(3) != kImageSize) {
    throw ShapeError("probe: expected [N,3,24,24] images, got " + shape_str(images.shape()));
  }
  std::vector<ProbePrediction> out;
  const int n = images.dim(0);
  for (int start = 0; start < n; start += 256) {
    std::vector<std::size_t> rows;
    for (int i = start; i < std::min(n, start + 256); ++i) rows.push_back(static_cast<std::size_t>(i));
    auto tape = Tape<float>::inference(probe);
    Logits lg = probe_forward(tape, constant(gather_rows(images, rows)));
    auto l = argmax_rows(lg.left.value()), r = argmax_rows(lg.right.value()), b = argmax_rows(lg.background.value());
    for (std::size_t i = 0; i < rows.size(); ++i) out.push_back({l[i], r[i], b[i]});
  }
  return out;
}

ProbeAccuracy probe_accuracy(const ParamStore<float>& probe, const Tensor<float>& images, const ProbeLabels& labels) {
  const auto pred = probe_predict(probe, images);
  if (pred.empty() || labels.left.size() != pred.size()) throw ValueError("probe_accuracy: label count mismatch");
  ProbeAccuracy acc;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    acc.left += pred[i].left == labels.left[i];
    acc.right += pred[i].right == labels.right[i];
    acc.background += pred[i].background == labels.background[i];
  }
  const double n = static_cast<double>(pred.size());
  acc.left /= n;
  acc.right /= n;
  acc.background /= n;
  return acc;
}

ProbeTrainResult train_probe_classifier(const Dataset& data, int identities, int backgrounds,
                                        const ProbeConfig& config, const LogSink& log) {
  if (data.size() == 0) throw ValueError("train_probe: empty dataset");
  ProbeLabels labels = labels_of(data);
  const std::set<int> classes(labels.left.begin(), labels.left.end());
  const std::set<int> classes_r(labels.right.begin(), labels.right.end());
  if (classes.size() < 2 && classes_r.size() < 2) throw ValueError("train_probe: dataset holds a single identity class");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (labels.left[i] >= identities || labels.right[i] >= identities || labels.background[i] >= backgrounds) {
      throw ValueError("train_probe: label outside the configured heads");
    }
  }
  Rng root(config.seed);
  if (config.shuffle_labels) {
    Rng shuffle = root.derive(3);
    const auto perm = permutation(data.size(), shuffle);
    labels = {pick(labels.left, perm), pick(labels.right, perm), pick(labels.background, perm)};
  }

  ProbeTrainResult result;
  Rng init_rng = root.derive(1);
  init_probe(result.params, identities, backgrounds, init_rng);
  Adam<float> adam({config.learning_rate});
  Rng order_rng = root.derive(2);
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = permutation(data.size(), order_rng);
    double total = 0.0;
    int count = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::span<const std::size_t> rows(order.data() + start, end - start);
      Tensor<float> x = gather_rows(data.images, rows);
      if (config.noise_std > 0.0) {
        Rng noise_rng = root.derive(1000 + step);
        const Tensor<float> noise = sample_standard_normal<float>(noise_rng, x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
          x[i] = std::clamp(x[i] + static_cast<float>(config.noise_std) * noise[i], -1.0f, 1.0f);
        }
      }
      Tape<float> tape(result.params);
      Logits lg = probe_forward(tape, constant(x));
      const auto l = pick(labels.left, rows), r = pick(labels.right, rows), b = pick(labels.background, rows);
      Var<float> loss = ops::add(ops::add(ops::cross_entropy(lg.left, std::span<const int>(l)),
                                          ops::cross_entropy(lg.right, std::span<const int>(r))),
                                 ops::cross_entropy(lg.background, std::span<const int>(b)));
      adam.step(result.params, backpropagate(loss, result.params));
      total += loss.value().item();
      ++count;
      ++step;
    }
    result.epoch_loss.push_back(total / count);
    if (log) log({"probe", static_cast<std::uint64_t>(epoch), result.epoch_loss.back(), config.learning_rate});
  }
  result.train_accuracy = probe_accuracy(result.params, data.images, labels);
  return result;
}

}  // namespace tidm
