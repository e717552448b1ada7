#include "tidm/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tidm/ops.hpp"

namespace tidm {

Vocabulary Vocabulary::grammar(int identities, int backgrounds) {
  if (identities < 1 || backgrounds < 1) throw ValueError("vocabulary: need at least one identity and background");
  Vocabulary v;
  for (int i = 0; i < identities; ++i) v.tokens_.push_back("ident" + std::to_string(i));
  for (const char* w : {"meets", "shakes", "with", "in"}) v.tokens_.emplace_back(w);
  for (int i = 0; i < backgrounds; ++i) v.tokens_.push_back("bg" + std::to_string(i));
  v.tokens_.emplace_back(kPadToken);
  v.tokens_.emplace_back(kNullToken);
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("vocabulary: cannot open " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw ValueError("vocabulary: empty line " + std::to_string(v.tokens_.size() + 1) + " in " + path);
    v.append(line);
  }
  if (!v.contains(kNullToken) || !v.contains(kPadToken)) throw ValueError("vocabulary: " + path + " lacks <pad>/<null>");
  v.source_ = path;
  return v;
}

void Vocabulary::save(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("vocabulary: cannot write " + path);
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw RuntimeFailure("vocabulary: write failed for " + path);
  source_ = path;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ValueError("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = std::find(tokens_.begin(), tokens_.end(), token);
  if (it == tokens_.end()) return std::nullopt;
  return static_cast<int>(it - tokens_.begin());
}

int Vocabulary::id(std::string_view token) const {
  if (auto i = find(token)) return *i;
  throw ValueError("vocabulary: unknown token '" + std::string(token) + "'");
}

bool Vocabulary::is_special(int id) const {
  const auto& t = token(id);
  return t == kPadToken || t == kNullToken;
}

int Vocabulary::append(const std::string& token) {
  if (contains(token)) throw ValueError("vocabulary: duplicate token '" + token + "'");
  tokens_.push_back(token);
  return size() - 1;
}

std::vector<int> Vocabulary::tokenize(std::string_view prompt, int length) const {
  if (length < 1) throw ValueError("tokenize: length must be positive");
  std::string lowered(prompt);
  for (auto& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::istringstream words(lowered);
  std::vector<int> ids;
  std::string word;
  while (words >> word) {
    auto id = find(word);
    if (!id || is_special(*id)) {
      throw ValueError("tokenize: unknown word '" + word + "' (vocabulary: " +
                       (source_.empty() ? std::string("<built-in grammar>") : source_) + ")");
    }
    ids.push_back(*id);
  }
  ids.resize(static_cast<std::size_t>(length), pad_id());
  return ids;
}

std::vector<int> Vocabulary::null_tokens(int length) const {
  std::vector<int> ids(static_cast<std::size_t>(length), pad_id());
  ids[0] = null_id();
  return ids;
}

void init_text(ParamStore<float>& params, const Vocabulary& vocab, const TextConfig& config, Rng& rng) {
  if (config.length < 1 || config.embed_dim < 1) throw ValueError("text: length and embed_dim must be positive");
  params.set("text/token_embedding", sample_standard_normal<float>(rng, {vocab.size(), config.embed_dim}));
  Tensor<float> pos = sample_standard_normal<float>(rng, {config.length, config.embed_dim});
  for (auto& v : pos.data()) v *= 0.1f;
  params.set("text/position_embedding", std::move(pos));
}

TextConfig infer_text_config(const ParamStore<float>& params) {
  const auto& pos = params.at("text/position_embedding");
  return {pos.dim(0), pos.dim(1)};
}

template <std::floating_point Real>
Var<Real> embed(Tape<Real>& tape, std::span<const int> ids, int batch) {
  Var<Real> pos = tape.param("text/position_embedding");
  const int length = pos.shape()[0];
  return ops::add_broadcast_leading(ops::embedding(tape.param("text/token_embedding"), ids, batch, length), pos);
}

Tensor<float> embed_tokens(const ParamStore<float>& params, std::span<const int> ids) {
  auto tape = Tape<float>::inference(params);
  Tensor<float> e = embed(tape, ids, 1).value();
  return e.reshaped({e.dim(1), e.dim(2)});
}

int register_placeholder(Vocabulary& vocab, ParamStore<float>& params, const std::string& token, Rng& rng) {
  if (token.empty() || !std::all_of(token.begin(), token.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
      })) {
    throw ValueError("register_placeholder: '" + token + "' must match [a-z0-9]+");
  }
  if (vocab.contains(token)) throw ValueError("register_placeholder: token '" + token + "' already present");
  const auto& table = params.at("text/token_embedding");
  if (table.dim(0) != vocab.size()) {
    throw ValueError("register_placeholder: embedding has " + std::to_string(table.dim(0)) + " rows, vocabulary " +
                     std::to_string(vocab.size()));
  }
  const int dim = table.dim(1);
  std::vector<double> mean(static_cast<std::size_t>(dim), 0.0);
  int count = 0;
  for (int id = 0; id < vocab.size(); ++id) {
    if (vocab.is_special(id)) continue;
    for (int d = 0; d < dim; ++d) mean[d] += table[static_cast<std::size_t>(id) * dim + d];
    ++count;
  }
  std::vector<float> rows = table.vec();
  const Tensor<float> noise = sample_standard_normal<float>(rng, {dim});
  for (int d = 0; d < dim; ++d) rows.push_back(static_cast<float>(mean[d] / std::max(count, 1)) + 0.01f * noise[d]);
  params.set("text/token_embedding", Tensor<float>({table.dim(0) + 1, dim}, std::move(rows)));
  return vocab.append(token);
}

std::optional<int> identity_of(std::string_view token) {
  constexpr std::string_view prefix = "ident";
  if (token.size() <= prefix.size() || token.substr(0, prefix.size()) != prefix) return std::nullopt;
  int value = 0;
  auto digits = token.substr(prefix.size());
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
  return value;
}

template Var<float> embed(Tape<float>&, std::span<const int>, int);
template Var<double> embed(Tape<double>&, std::span<const int>, int);

}  // namespace tidm
