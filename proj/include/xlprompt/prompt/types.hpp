#pragma once

#include <cstddef>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "xlprompt/core/error.hpp"

namespace xlprompt {

using Token = std::string;
using TokenSequence = std::vector<Token>;
using LanguageCode = std::string;

inline const LanguageCode source_language = "EN";
inline const Token mask_token = "<mask>";

/// A labeled sentence pair in one language.
struct LabeledPair {
  TokenSequence sentence_a;
  TokenSequence sentence_b;
  std::size_t label = 0;
  LanguageCode language = source_language;

  friend bool operator==(const LabeledPair&, const LabeledPair&) = default;
};

inline void validate(const LabeledPair& pair, std::size_t num_classes) {
  if (pair.sentence_a.empty() || pair.sentence_b.empty()) {
    throw input_error("labeled pair has an empty sentence (language " + pair.language + ")");
  }
  if (pair.label >= num_classes) {
    throw input_error("label " + std::to_string(pair.label) + " out of range for " +
                      std::to_string(num_classes) + " classes");
  }
}

/// A prompt with exactly one mask slot.
struct PromptedExample {
  TokenSequence tokens;
  std::size_t mask_position = 0;
  std::size_t label = 0;
  LanguageCode language = source_language;
};

/// Split on ASCII whitespace.
inline TokenSequence split_tokens(std::string_view text) {
  TokenSequence out;
  std::string current;
  for (char ch : text) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      if (!current.empty()) {
        out.push_back(std::move(current));
        current.clear();
      }
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) {
    out.push_back(std::move(current));
  }
  return out;
}

inline std::string join_tokens(const TokenSequence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) {
      out.push_back(' ');
    }
    out += tokens[i];
  }
  return out;
}

} // namespace xlprompt
