#pragma once

// Closed-grammar tokenizer and learned text embeddings. Captions look like
// "ident1 meets ident3 in bg0"; placeholders registered for fine-tuning are
// appended to the vocabulary and get a fresh embedding row.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tidm/autograd.hpp"
#include "tidm/rng.hpp"

namespace tidm {

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kNullToken = "<null>";

class Vocabulary {
 public:
  /// ident0..identK-1, relation words, "in", bg0..bgM-1, <pad>, <null>.
  static Vocabulary grammar(int identities, int backgrounds);
  /// One token per line, line number = id.
  static Vocabulary load(const std::string& path);
  void save(const std::string& path);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  std::optional<int> find(std::string_view token) const;
  int id(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  int pad_id() const { return id(kPadToken); }
  int null_id() const { return id(kNullToken); }
  bool is_special(int id) const;

  /// Appends a token (no embedding change); throws on duplicates.
  int append(const std::string& token);

  /// Lowercase, split on whitespace, look up, pad/truncate to `length`.
  std::vector<int> tokenize(std::string_view prompt, int length) const;
  /// <null> followed by padding.
  std::vector<int> null_tokens(int length) const;

  /// File this vocabulary was loaded from or last saved to (may be empty).
  const std::string& source() const { return source_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::string source_;
};

struct TextConfig {
  int length = 8;
  int embed_dim = 64;
};

/// `text/token_embedding` [V,E] and `text/position_embedding` [L,E].
void init_text(ParamStore<float>& params, const Vocabulary& vocab, const TextConfig& config, Rng& rng);
TextConfig infer_text_config(const ParamStore<float>& params);

/// ids: batch*L token ids -> [batch,L,E] (token row + position row).
template <std::floating_point Real>
Var<Real> embed(Tape<Real>& tape, std::span<const int> ids, int batch);

/// Convenience: embeddings of a single prompt's ids as a plain tensor [L,E].
Tensor<float> embed_tokens(const ParamStore<float>& params, std::span<const int> ids);

/// Adds `token` to the vocabulary and a new embedding row equal to the mean
/// of the non-special rows plus N(0, 0.01^2) noise from `rng`.
/// Returns the new id.
int register_placeholder(Vocabulary& vocab, ParamStore<float>& params, const std::string& token, Rng& rng);

/// Identity index named by an `identK` token, if the token is one.
std::optional<int> identity_of(std::string_view token);

}  // namespace tidm
