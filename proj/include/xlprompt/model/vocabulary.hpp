#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xlprompt/core/error.hpp"
#include "xlprompt/prompt/types.hpp"

namespace xlprompt {

using TokenId = std::int32_t;

/// Special tokens every toy vocabulary starts with, in id order.
inline const std::vector<Token> special_tokens = {"<pad>", "<unk>", "<mask>", "<cls>", "<sep>"};

class Vocabulary {
public:
  Vocabulary() = default;

  explicit Vocabulary(const std::vector<Token>& tokens) {
    for (const auto& t : tokens) {
      add(t);
    }
  }

  /// Adds `token` if new; returns its id either way.
  TokenId add(const Token& token) {
    if (auto it = index_.find(token); it != index_.end()) {
      return it->second;
    }
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
  }

  std::optional<TokenId> find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) {
      return std::nullopt;
    }
    return it->second;
  }

  bool contains(std::string_view token) const { return find(token).has_value(); }

  TokenId id(std::string_view token) const {
    if (auto found = find(token)) {
      return *found;
    }
    throw input_error("token '" + std::string(token) + "' is not in the vocabulary");
  }

  const Token& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw input_error("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<Token>& tokens() const noexcept { return tokens_; }

  TokenId unk_id() const { return id("<unk>"); }
  TokenId mask_id() const { return id(mask_token); }
  TokenId cls_id() const { return id("<cls>"); }
  TokenId sep_id() const { return id("<sep>"); }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
  std::vector<Token> tokens_;
  std::unordered_map<Token, TokenId> index_;
};

enum class TokenizerKind {
  whole_word,     ///< a word is one token or unknown
  greedy_subword, ///< longest-prefix pieces, continuations spelled "##piece"
};

inline std::string_view to_string(TokenizerKind k) {
  return k == TokenizerKind::whole_word ? "whole_word" : "greedy_subword";
}

inline TokenizerKind parse_tokenizer_kind(std::string_view name) {
  if (name == "whole_word") {
    return TokenizerKind::whole_word;
  }
  if (name == "greedy_subword") {
    return TokenizerKind::greedy_subword;
  }
  throw configuration_error("unknown tokenizer kind '" + std::string(name) + "'");
}

class Tokenizer {
public:
  Tokenizer() = default;
  Tokenizer(Vocabulary vocabulary, TokenizerKind kind = TokenizerKind::whole_word)
      : vocabulary_(std::move(vocabulary)), kind_(kind) {}

  const Vocabulary& vocabulary() const noexcept { return vocabulary_; }
  TokenizerKind kind() const noexcept { return kind_; }

  /// Token ids for one whitespace-free word. Unknown material maps to <unk>.
  std::vector<TokenId> tokenize_word(std::string_view word) const {
    if (auto id = vocabulary_.find(word)) {
      return {*id};
    }
    if (kind_ == TokenizerKind::whole_word) {
      return {vocabulary_.unk_id()};
    }
    std::vector<TokenId> pieces;
    std::size_t pos = 0;
    while (pos < word.size()) {
      std::optional<TokenId> best;
      std::size_t best_end = pos;
      for (std::size_t end = word.size(); end > pos; --end) {
        if (end < word.size() && is_continuation_byte(word[end])) {
          continue;
        }
        std::string piece = (pos == 0 ? "" : "##") + std::string(word.substr(pos, end - pos));
        if (auto id = vocabulary_.find(piece)) {
          best = id;
          best_end = end;
          break;
        }
      }
      if (!best) {
        return {vocabulary_.unk_id()};
      }
      pieces.push_back(*best);
      pos = best_end;
    }
    return pieces;
  }

  /// True when `word` is exactly one known vocabulary token.
  bool is_single_token(std::string_view word) const {
    const auto ids = tokenize_word(word);
    return ids.size() == 1 && ids.front() != vocabulary_.unk_id();
  }

private:
  static bool is_continuation_byte(char c) { return (static_cast<unsigned char>(c) & 0xC0) == 0x80; }

  Vocabulary vocabulary_;
  TokenizerKind kind_ = TokenizerKind::whole_word;
};

} // namespace xlprompt
