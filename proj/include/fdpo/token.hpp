#pragma once

// Token-level data model: lossless lexical tokenization over a growable
// vocabulary. Segmentation, log-probabilities and losses are all defined on
// these token ids, so the round-trip identity detokenize(tokenize(s)) == s
// is the load-bearing contract here.

#include <cctype>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace fdpo {

using TokenId = std::int32_t;

/// Reserved start-of-sequence padding id; never produced by the tokenizer.
inline constexpr TokenId kPadToken = 0;

struct TokenSeq {
  std::vector<TokenId> ids;

  TokenSeq() = default;
  explicit TokenSeq(std::vector<TokenId> v) : ids(std::move(v)) {}

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  TokenId operator[](std::size_t i) const { return ids[i]; }
  bool operator==(const TokenSeq&) const = default;

  /// Half-open token range [begin, end).
  TokenSeq slice(std::size_t begin, std::size_t end) const {
    return TokenSeq(std::vector<TokenId>(ids.begin() + static_cast<std::ptrdiff_t>(begin),
                                         ids.begin() + static_cast<std::ptrdiff_t>(end)));
  }

  TokenSeq& append(const TokenSeq& other) {
    ids.insert(ids.end(), other.ids.begin(), other.ids.end());
    return *this;
  }

  TokenSeq& append(TokenId id) {
    ids.push_back(id);
    return *this;
  }

  friend TokenSeq concat(const TokenSeq& a, const TokenSeq& b) {
    TokenSeq out = a;
    out.append(b);
    return out;
  }
};

inline TokenSeq concat(const TokenSeq& a, const TokenSeq& b, const TokenSeq& c) {
  TokenSeq out = a;
  out.append(b);
  out.append(c);
  return out;
}

/**
 * Bidirectional lexeme <-> id table. Id 0 is the reserved pad/start marker.
 * Interning is append-only, so ids are stable for the life of the corpus.
 */
class Vocabulary {
 public:
  Vocabulary() { intern_new("<pad>"); }

  TokenId intern(std::string_view lexeme) {
    auto it = index_.find(std::string(lexeme));
    if (it != index_.end()) return it->second;
    return intern_new(lexeme);
  }

  std::optional<TokenId> lookup(std::string_view lexeme) const {
    auto it = index_.find(std::string(lexeme));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& lexeme(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= lexemes_.size())
      throw std::out_of_range("Vocabulary: unknown token id " + std::to_string(id));
    return lexemes_[static_cast<std::size_t>(id)];
  }

  int size() const { return static_cast<int>(lexemes_.size()); }

  nlohmann::json to_json() const {
    return {{"format_version", 1}, {"lexemes", lexemes_}};
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    const auto& lex = j.at("lexemes");
    if (lex.empty() || lex.at(0).get<std::string>() != "<pad>")
      throw std::runtime_error("Vocabulary: malformed table, missing <pad> at id 0");
    for (std::size_t i = 1; i < lex.size(); ++i) v.intern_new(lex.at(i).get<std::string>());
    return v;
  }

 private:
  TokenId intern_new(std::string_view lexeme) {
    TokenId id = static_cast<TokenId>(lexemes_.size());
    lexemes_.emplace_back(lexeme);
    index_.emplace(lexemes_.back(), id);
    return id;
  }

  std::vector<std::string> lexemes_;
  std::unordered_map<std::string, TokenId> index_;
};

namespace detail {
inline bool is_word_start(unsigned char c) { return std::isalpha(c) || c == '_'; }
inline bool is_word(unsigned char c) { return std::isalnum(c) || c == '_'; }
inline bool is_blank(unsigned char c) { return c == ' ' || c == '\t'; }
}  // namespace detail

/**
 * Lossless lexer. Token classes: identifier/keyword runs, digit runs, runs of
 * spaces/tabs, single newlines, and single characters for everything else.
 * Total over all byte strings; extends the vocabulary as needed.
 */
inline TokenSeq tokenize(std::string_view text, Vocabulary& vocab) {
  TokenSeq out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t j = i + 1;
    if (detail::is_word_start(c)) {
      while (j < text.size() && detail::is_word(static_cast<unsigned char>(text[j]))) ++j;
    } else if (std::isdigit(c)) {
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
    } else if (detail::is_blank(c)) {
      while (j < text.size() && detail::is_blank(static_cast<unsigned char>(text[j]))) ++j;
    }
    // newlines and any other byte stay single-character tokens
    out.ids.push_back(vocab.intern(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

/// Tokenize against a frozen vocabulary: same lexing rules as tokenize(), but
/// an unknown lexeme is an error instead of a new entry. Use when token ids
/// must stay consistent with an already-persisted vocabulary.
inline TokenSeq tokenize_frozen(std::string_view text, const Vocabulary& vocab) {
  TokenSeq out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t j = i + 1;
    if (detail::is_word_start(c)) {
      while (j < text.size() && detail::is_word(static_cast<unsigned char>(text[j]))) ++j;
    } else if (std::isdigit(c)) {
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
    } else if (detail::is_blank(c)) {
      while (j < text.size() && detail::is_blank(static_cast<unsigned char>(text[j]))) ++j;
    }
    const auto lexeme = text.substr(i, j - i);
    const auto id = vocab.lookup(lexeme);
    if (!id)
      throw std::invalid_argument("tokenize_frozen: unknown lexeme '" + std::string(lexeme) +
                                  "'");
    out.ids.push_back(*id);
    i = j;
  }
  return out;
}

inline std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : seq.ids) {
    if (id == kPadToken)
      throw std::invalid_argument("detokenize: pad token has no surface form");
    out += vocab.lexeme(id);
  }
  return out;
}

}  // namespace fdpo
