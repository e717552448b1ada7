#include "tidm/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "tidm/error.hpp"
#include "tidm/image_io.hpp"

namespace tidm {

namespace {

using Rgb = std::array<float, 3>;

constexpr std::array<Rgb, kMaxIdentities> kPrimary{{
    {0.90f, 0.15f, 0.15f},
    {0.15f, 0.85f, 0.20f},
    {0.20f, 0.30f, 0.95f},
    {0.95f, 0.90f, 0.15f},
    {0.90f, 0.20f, 0.85f},
    {0.15f, 0.90f, 0.90f},
    {1.00f, 0.55f, 0.10f},
    {0.95f, 0.95f, 0.95f},
}};

constexpr std::array<Rgb, kMaxIdentities> kSecondary{{
    {1.00f, 0.90f, 0.30f},
    {0.05f, 0.25f, 0.05f},
    {0.95f, 0.95f, 1.00f},
    {0.60f, 0.10f, 0.10f},
    {0.15f, 0.05f, 0.30f},
    {0.05f, 0.20f, 0.50f},
    {0.30f, 0.10f, 0.00f},
    {0.10f, 0.10f, 0.10f},
}};

constexpr std::array<Rgb, kMaxBackgrounds> kSky{{
    {0.35f, 0.45f, 0.65f},
    {0.60f, 0.50f, 0.40f},
    {0.30f, 0.30f, 0.35f},
    {0.55f, 0.35f, 0.50f},
    {0.45f, 0.55f, 0.45f},
    {0.20f, 0.20f, 0.45f},
    {0.60f, 0.60f, 0.55f},
    {0.45f, 0.25f, 0.20f},
}};

constexpr std::array<Rgb, kMaxBackgrounds> kGround{{
    {0.25f, 0.35f, 0.20f},
    {0.40f, 0.30f, 0.25f},
    {0.50f, 0.50f, 0.50f},
    {0.30f, 0.20f, 0.35f},
    {0.20f, 0.30f, 0.30f},
    {0.35f, 0.35f, 0.15f},
    {0.25f, 0.25f, 0.30f},
    {0.15f, 0.25f, 0.40f},
}};

constexpr Rgb kContact{0.95f, 0.80f, 0.60f};

bool sprite_pixel(int identity, int u, int v) {
  const float du = u - 3.5f, dv = v - 3.5f;
  const float r2 = du * du + dv * dv;
  switch (identity) {
    case 0: return u >= 1 && u <= 6 && v >= 1 && v <= 6;
    case 1: return r2 <= 12.5f;
    case 2: return v >= 1 && std::abs(du) <= v * 0.5f;
    case 3: return std::abs(du) + std::abs(dv) <= 4.0f;
    case 4: return std::abs(du) <= 1.5f || std::abs(dv) <= 1.5f;
    case 5: return r2 >= 4.0f && r2 <= 16.0f;
    case 6: return std::abs(u - v) <= 1 || std::abs(u + v - 7) <= 1;
    default: return v >= 2 && v <= 5;
  }
}

bool secondary_pixel(int u, int v) { return (u == 3 || u == 4) && (v == 3 || v == 4); }

float background_texture(int background, int x, int y) {
  switch (background % 4) {
    case 1: return (x / 2) % 2 == 0 ? 0.06f : -0.06f;
    case 2: return ((x / 3) + (y / 3)) % 2 == 0 ? 0.05f : -0.05f;
    case 3: return (y % 3 == 0) ? 0.08f : 0.0f;
    default: return 0.0f;
  }
}

void put(std::vector<float>& rgb, int x, int y, const Rgb& c) {
  for (int ch = 0; ch < 3; ++ch) rgb[static_cast<std::size_t>(ch) * kImageSize * kImageSize + y * kImageSize + x] = c[ch];
}

Relation relation_from(std::string_view word) {
  if (word == "meets") return Relation::meets;
  if (word == "shakes") return Relation::shakes;
  if (word == "with") return Relation::with;
  throw ValueError("caption: unknown relation '" + std::string(word) + "'");
}

}  // namespace

const char* relation_word(Relation r) {
  switch (r) {
    case Relation::shakes: return "shakes";
    case Relation::with: return "with";
    default: return "meets";
  }
}

std::string SceneSpec::caption() const {
  return "ident" + std::to_string(identity_a) + " " + relation_word(relation) + " ident" + std::to_string(identity_b) +
         " in bg" + std::to_string(variant.background);
}

CaptionParts parse_caption(const std::string& caption) {
  std::istringstream in(caption);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  if (words.size() != 5 || words[3] != "in" || words[4].rfind("bg", 0) != 0) {
    throw ValueError("caption: expected 'A rel B in bgM', got '" + caption + "'");
  }
  CaptionParts parts;
  parts.subject_a = words[0];
  parts.relation = relation_from(words[1]);
  parts.subject_b = words[2];
  try {
    std::size_t used = 0;
    parts.background = std::stoi(words[4].substr(2), &used);
    if (used != words[4].size() - 2) throw ValueError("");
  } catch (const std::exception&) {
    throw ValueError("caption: bad background token '" + words[4] + "'");
  }
  return parts;
}

void DatasetConfig::validate() const {
  if (scenes < 1) throw ValueError("dataset: scenes must be >= 1");
  if (identities < 3 || identities > kMaxIdentities) {
    throw ValueError("dataset: identities must be in [3, " + std::to_string(kMaxIdentities) + "], got " +
                     std::to_string(identities));
  }
  if (backgrounds < 2 || backgrounds > kMaxBackgrounds) {
    throw ValueError("dataset: backgrounds must be in [2, " + std::to_string(kMaxBackgrounds) + "], got " +
                     std::to_string(backgrounds));
  }
  if (group_size < 1) throw ValueError("dataset: group_size must be >= 1");
}

RenderedScene render_scene(const SceneSpec& s) {
  const auto& bv = s.variant;
  if (bv.background < 0 || bv.background >= kMaxBackgrounds) throw ValueError("render: background out of range");
  for (int id : {s.identity_a, s.identity_b})
    if (id < 0 || id >= kMaxIdentities) throw ValueError("render: identity out of range");
  constexpr int n = kImageSize;
  std::vector<float> rgb(3 * n * n);
  std::vector<float> mask(n * n, 1.0f);

  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      Rgb c;
      if (y < bv.horizon) {
        const float g = 0.85f + 0.15f * std::sin(2.0f * std::numbers::pi_v<float> * y / n + bv.phase);
        for (int ch = 0; ch < 3; ++ch) c[ch] = kSky[bv.background][ch] * g;
      } else {
        const float t = background_texture(bv.background, x, y);
        for (int ch = 0; ch < 3; ++ch) c[ch] = kGround[bv.background][ch] + t;
      }
      if (x >= bv.rect_x && x < bv.rect_x + bv.rect_w && y >= bv.rect_y && y < bv.rect_y + bv.rect_h) {
        for (int ch = 0; ch < 3; ++ch) c[ch] = kGround[bv.background][ch] * 0.6f + bv.rect_shade;
      }
      put(rgb, x, y, c);
    }
  }

  auto draw_sprite = [&](int identity, int ox, int oy) {
    for (int v = 0; v < kSpriteSize; ++v) {
      for (int u = 0; u < kSpriteSize; ++u) {
        const int x = ox + u, y = oy + v;
        if (x < 0 || x >= n || y < 0 || y >= n || !sprite_pixel(identity, u, v)) continue;
        put(rgb, x, y, secondary_pixel(u, v) ? kSecondary[identity] : kPrimary[identity]);
        mask[y * n + x] = 0.0f;
      }
    }
  };
  draw_sprite(s.identity_a, s.ax, s.ay);
  draw_sprite(s.identity_b, s.bx, s.by);
  if (s.contact()) {
    const int row = (s.ay + s.by) / 2 + 3;
    for (int x = s.ax + kSpriteSize - 1; x <= s.bx; ++x) {
      for (int y = row; y < row + 2; ++y) {
        if (x < 0 || x >= n || y < 0 || y >= n) continue;
        put(rgb, x, y, kContact);
        mask[y * n + x] = 0.0f;
      }
    }
  }

  RenderedScene out{Tensor<float>({3, n, n}), Tensor<float>({1, n, n}, std::move(mask))};
  for (std::size_t i = 0; i < rgb.size(); ++i) out.image[i] = quantize(2.0f * std::clamp(rgb[i], 0.0f, 1.0f) - 1.0f);
  return out;
}

BackgroundVariant random_variant(Rng& rng, int background) {
  BackgroundVariant v;
  v.background = background;
  v.horizon = 8 + static_cast<int>(rng.uniform_int(8));
  v.rect_w = 3 + static_cast<int>(rng.uniform_int(5));
  v.rect_h = 3 + static_cast<int>(rng.uniform_int(5));
  v.rect_x = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(kImageSize - v.rect_w + 1)));
  v.rect_y = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(kImageSize - v.rect_h + 1)));
  v.rect_shade = static_cast<float>(0.3 * rng.uniform());
  v.phase = static_cast<float>(2.0 * std::numbers::pi * rng.uniform());
  return v;
}

SceneSpec random_scene(Rng& rng, int identity_a, int identity_b, Relation relation, const BackgroundVariant& variant) {
  SceneSpec s;
  s.identity_a = identity_a;
  s.identity_b = identity_b;
  s.relation = relation;
  s.variant = variant;
  if (relation == Relation::shakes) {
    s.ax = 3 + static_cast<int>(rng.uniform_int(2));
    s.bx = 12 + static_cast<int>(rng.uniform_int(2));
  } else {
    s.ax = static_cast<int>(rng.uniform_int(4));
    s.bx = 13 + static_cast<int>(rng.uniform_int(4));
  }
  s.ay = 4 + static_cast<int>(rng.uniform_int(12));
  s.by = relation == Relation::with ? s.ay : 4 + static_cast<int>(rng.uniform_int(12));
  return s;
}

Dataset make_dataset(const DatasetConfig& config) {
  config.validate();
  const int pool = config.include_held_out ? config.identities : config.identities - 1;
  Rng master(config.seed);
  Dataset data;
  data.scenes.reserve(static_cast<std::size_t>(config.scenes));
  const int groups = (config.scenes + config.group_size - 1) / config.group_size;
  for (int g = 0; g < groups; ++g) {
    Rng rng = master.derive(static_cast<std::uint64_t>(g));
    const BackgroundVariant variant =
        random_variant(rng, static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(config.backgrounds))));
    const auto relation = static_cast<Relation>(rng.uniform_int(3));
    const SceneSpec layout = random_scene(rng, 0, 1, relation, variant);
    for (int k = 0; k < config.group_size && static_cast<int>(data.scenes.size()) < config.scenes; ++k) {
      SceneSpec s = layout;
      s.identity_a = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(pool)));
      s.identity_b = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(pool - 1)));
      if (s.identity_b >= s.identity_a) ++s.identity_b;
      s.group = g;
      data.scenes.push_back(s);
    }
  }
  std::vector<Tensor<float>> images(data.scenes.size()), masks(data.scenes.size());
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    auto r = render_scene(data.scenes[i]);
    images[i] = std::move(r.image);
    masks[i] = std::move(r.mask);
  }
  data.images = stack<float>(images);
  data.masks = stack<float>(masks);
  return data;
}

std::vector<std::string> Dataset::captions() const {
  std::vector<std::string> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(s.caption());
  return out;
}

namespace {

std::string scene_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu.ppm", i);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& data, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  std::ofstream captions(fs::path(dir) / "captions.txt", std::ios::binary);
  std::ofstream scenes(fs::path(dir) / "scenes.txt", std::ios::binary);
  if (!captions || !scenes) throw RuntimeFailure("dataset: cannot write into " + dir);
  scenes << "# group background horizon rect_x rect_y rect_w rect_h rect_shade phase a relation b ax ay bx by\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.scenes[i];
    write_ppm((fs::path(dir) / "images" / scene_name(i)).string(), data.images.slice0(static_cast<int>(i)));
    write_mask((fs::path(dir) / "masks" / scene_name(i)).string(), data.masks.slice0(static_cast<int>(i)));
    captions << scene_name(i).substr(0, 5) << ' ' << s.caption() << '\n';
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d %d %d %d %d %d %d %.9g %.9g %d %s %d %d %d %d %d\n", s.group, s.variant.background,
                  s.variant.horizon, s.variant.rect_x, s.variant.rect_y, s.variant.rect_w, s.variant.rect_h,
                  static_cast<double>(s.variant.rect_shade), static_cast<double>(s.variant.phase), s.identity_a,
                  relation_word(s.relation), s.identity_b, s.ax, s.ay, s.bx, s.by);
    scenes << buf;
  }
  if (!captions || !scenes) throw RuntimeFailure("dataset: write failed in " + dir);
}

Dataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream scenes(fs::path(dir) / "scenes.txt");
  if (!scenes) throw ValueError("dataset: no scenes.txt in " + dir);
  Dataset data;
  std::vector<Tensor<float>> images, masks;
  std::string line;
  while (std::getline(scenes, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream in(line);
    SceneSpec s;
    std::string relation;
    in >> s.group >> s.variant.background >> s.variant.horizon >> s.variant.rect_x >> s.variant.rect_y >>
        s.variant.rect_w >> s.variant.rect_h >> s.variant.rect_shade >> s.variant.phase >> s.identity_a >> relation >>
        s.identity_b >> s.ax >> s.ay >> s.bx >> s.by;
    if (!in) throw ValueError("dataset: malformed line in scenes.txt: " + line);
    s.relation = relation_from(relation);
    const std::size_t i = data.scenes.size();
    images.push_back(read_ppm((fs::path(dir) / "images" / scene_name(i)).string()));
    masks.push_back(read_mask((fs::path(dir) / "masks" / scene_name(i)).string()));
    data.scenes.push_back(s);
  }
  if (data.scenes.empty()) throw ValueError("dataset: " + dir + " holds no scenes");
  data.images = stack<float>(images);
  data.masks = stack<float>(masks);
  return data;
}

std::vector<std::size_t> group_siblings(const Dataset& data, std::size_t i) {
  std::vector<std::size_t> out;
  const int g = data.scenes.at(i).group;
  // Groups are contiguous runs.
  std::size_t lo = i;
  while (lo > 0 && data.scenes[lo - 1].group == g) --lo;
  for (std::size_t j = lo; j < data.size() && data.scenes[j].group == g; ++j)
    if (j != i) out.push_back(j);
  return out;
}

}  // namespace tidm
