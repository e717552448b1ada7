#include "tidm/evaluate.hpp"

#include <cmath>

namespace tidm {

double background_consistency(const Tensor<float>& images, const Tensor<float>& mask) {
  if (images.rank() != 4 || images.dim(0) < 1) throw ValueError("background_consistency: empty batch");
  const int b = images.dim(0), c = images.dim(1);
  if (mask.rank() != 3 || mask.dim(0) != 1 || mask.dim(1) != images.dim(2) || mask.dim(2) != images.dim(3)) {
    throw ShapeError("background_consistency: mask " + shape_str(mask.shape()) + " vs images " +
                     shape_str(images.shape()));
  }
  const std::size_t plane = mask.size();
  std::size_t count = 0;
  for (float m : mask.data()) count += m > 0.5f;
  if (count == 0) throw ValueError("background_consistency: mask selects no pixels");
  if (b == 1) return 0.0;
  const std::size_t per = static_cast<std::size_t>(c) * plane;
  double total = 0.0;
  int pairs = 0;
  for (int i = 0; i < b; ++i) {
    for (int j = i + 1; j < b; ++j) {
      double se = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        for (std::size_t p = 0; p < plane; ++p) {
          if (mask[p] <= 0.5f) continue;
          const double d = static_cast<double>(images[i * per + ch * plane + p]) - images[j * per + ch * plane + p];
          se += d * d;
        }
      }
      total += std::sqrt(se / static_cast<double>(count * static_cast<std::size_t>(c)));
      ++pairs;
    }
  }
  return total / pairs;
}

SlotScore identity_agreement(const ParamStore<float>& probe, const Tensor<float>& images, int identity_a,
                             int identity_b) {
  const auto pred = probe_predict(probe, images);
  if (pred.empty()) throw ValueError("identity_agreement: empty batch");
  SlotScore s;
  s.images = pred.size();
  for (const auto& p : pred) {
    s.a += p.left == identity_a;
    s.b += p.right == identity_b;
  }
  s.a /= static_cast<double>(pred.size());
  s.b /= static_cast<double>(pred.size());
  const int slots = (identity_a >= 0) + (identity_b >= 0);
  s.mean = slots == 0 ? 0.0 : ((identity_a >= 0 ? s.a : 0.0) + (identity_b >= 0 ? s.b : 0.0)) / slots;
  return s;
}

EvalReport evaluate(const ParamStore<float>& probe, const std::vector<GeneratedBatch>& batches,
                    const LatentCodec* codec, const Tensor<float>* reference) {
  if (batches.empty()) throw ValueError("evaluate: no batches");
  EvalReport r;
  double id_correct = 0, id_slots = 0, a_correct = 0, a_slots = 0, b_correct = 0, b_slots = 0;
  double cls_correct = 0, cls_slots = 0, consistency = 0;
  for (const auto& batch : batches) {
    if (batch.images.rank() != 4 || batch.images.dim(0) == 0) throw ValueError("evaluate: empty batch");
    const auto n = static_cast<std::size_t>(batch.images.dim(0));
    if (batch.identity_a >= 0 || batch.identity_b >= 0) {
      const SlotScore s = identity_agreement(probe, batch.images, batch.identity_a, batch.identity_b);
      double correct = 0, slots = 0;
      if (batch.identity_a >= 0) {
        correct += s.a * n;
        slots += n;
      }
      if (batch.identity_b >= 0) {
        correct += s.b * n;
        slots += n;
      }
      if (batch.class_prompt) {
        cls_correct += correct;
        cls_slots += slots;
        r.class_samples += n;
      } else {
        id_correct += correct;
        id_slots += slots;
        r.identity_samples += n;
        if (batch.identity_a >= 0) {
          a_correct += s.a * n;
          a_slots += n;
        }
        if (batch.identity_b >= 0) {
          b_correct += s.b * n;
          b_slots += n;
        }
      }
    }
    if (batch.mask) {
      consistency += background_consistency(batch.images, *batch.mask);
      ++r.consistency_batches;
    }
  }
  if (id_slots > 0) r.identity_accuracy = id_correct / id_slots;
  if (a_slots > 0) r.identity_accuracy_a = a_correct / a_slots;
  if (b_slots > 0) r.identity_accuracy_b = b_correct / b_slots;
  if (cls_slots > 0) r.class_accuracy = cls_correct / cls_slots;
  if (r.consistency_batches > 0) r.background_consistency = consistency / static_cast<double>(r.consistency_batches);
  if (codec && reference) {
    r.reconstruction_psnr = psnr(codec->decode(codec->encode(*reference)), *reference);
    r.psnr_samples = static_cast<std::size_t>(reference->dim(0));
  }
  return r;
}

}  // namespace tidm
