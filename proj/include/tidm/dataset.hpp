#pragma once

// Procedural captioned-sprite corpus. Each scene places two identity sprites
// (shape + palette signature) over a background. Scenes come in groups that
// share one composition: background variant (background id plus random
// details: horizon row, a furniture rectangle, gradient phase), relation and
// sprite positions; only the identities differ inside a group. The renderer
// also emits the background mask used by the consistency metric.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tidm/rng.hpp"
#include "tidm/tensor.hpp"

namespace tidm {

enum class Relation { meets = 0, shakes = 1, with = 2 };

const char* relation_word(Relation r);

struct BackgroundVariant {
  int background = 0;
  int horizon = 12;
  int rect_x = 0, rect_y = 0, rect_w = 4, rect_h = 4;
  float rect_shade = 0.0f;
  float phase = 0.0f;
};

struct SceneSpec {
  int identity_a = 0;
  int identity_b = 1;
  Relation relation = Relation::meets;
  BackgroundVariant variant;
  int group = 0;
  int ax = 0, ay = 0, bx = 0, by = 0;  // sprite top-left corners
  /// "shakes" scenes draw a contact region between the two sprites.
  bool contact() const { return relation == Relation::shakes; }
  std::string caption() const;
};

struct CaptionParts {
  std::string subject_a;
  Relation relation = Relation::meets;
  std::string subject_b;
  int background = 0;
};

/// Inverse of SceneSpec::caption for the grammar "A rel B in bgM"; A and B
/// may be placeholders.
CaptionParts parse_caption(const std::string& caption);

inline constexpr int kImageSize = 24;
inline constexpr int kSpriteSize = 8;
inline constexpr int kMaxIdentities = 8;
inline constexpr int kMaxBackgrounds = 8;

struct DatasetConfig {
  int scenes = 2000;
  int identities = 6;
  int backgrounds = 4;
  int group_size = 4;
  std::uint64_t seed = 1;
  /// Allow the held-out identity (the last one) in scenes. Off for the
  /// training corpus; on for probe data.
  bool include_held_out = false;

  void validate() const;
  int held_out() const { return identities - 1; }
};

struct Dataset {
  std::vector<SceneSpec> scenes;
  Tensor<float> images;  // [N,3,24,24] in [-1,1]
  Tensor<float> masks;   // [N,1,24,24], 1 = background pixel

  std::size_t size() const { return scenes.size(); }
  std::vector<std::string> captions() const;
};

struct RenderedScene {
  Tensor<float> image;  // [3,24,24]
  Tensor<float> mask;   // [1,24,24]
};

RenderedScene render_scene(const SceneSpec& spec);

BackgroundVariant random_variant(Rng& rng, int background);
/// Random layout for a pair of identities over a given variant.
SceneSpec random_scene(Rng& rng, int identity_a, int identity_b, Relation relation, const BackgroundVariant& variant);

Dataset make_dataset(const DatasetConfig& config);

/// Writes images/NNNNN.ppm, masks/NNNNN.ppm, captions.txt, scenes.txt.
void write_dataset(const Dataset& data, const std::string& dir);
/// Reads back a directory written by write_dataset.
Dataset read_dataset(const std::string& dir);

/// Indices of scenes sharing scene i's group, excluding i itself.
std::vector<std::size_t> group_siblings(const Dataset& data, std::size_t i);

}  // namespace tidm
