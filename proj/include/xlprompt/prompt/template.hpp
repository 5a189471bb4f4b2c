#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "xlprompt/core/error.hpp"
#include "xlprompt/prompt/types.hpp"

namespace xlprompt {

/// The five prompt/verbalizer designs compared for cross-lingual prompting.
enum class TemplateVariant {
  zhao_full,
  no_template_translation,
  no_verbalizer_translation,
  no_prompting_words,
  universal,
};

inline constexpr std::array<TemplateVariant, 5> all_template_variants = {
    TemplateVariant::zhao_full, TemplateVariant::no_template_translation,
    TemplateVariant::no_verbalizer_translation, TemplateVariant::no_prompting_words,
    TemplateVariant::universal};

inline std::string_view to_string(TemplateVariant v) {
  switch (v) {
  case TemplateVariant::zhao_full: return "zhao_full";
  case TemplateVariant::no_template_translation: return "no_template_translation";
  case TemplateVariant::no_verbalizer_translation: return "no_verbalizer_translation";
  case TemplateVariant::no_prompting_words: return "no_prompting_words";
  case TemplateVariant::universal: return "universal";
  }
  return "unknown";
}

inline TemplateVariant parse_template_variant(std::string_view name) {
  for (auto v : all_template_variants) {
    if (to_string(v) == name) {
      return v;
    }
  }
  throw configuration_error("unknown template variant '" + std::string(name) + "'");
}

/// True when the variant places prompting words ("Question:", "Answer:") in the prompt.
constexpr bool uses_prompting_words(TemplateVariant v) {
  return v == TemplateVariant::zhao_full || v == TemplateVariant::no_template_translation ||
         v == TemplateVariant::no_verbalizer_translation;
}

struct PromptingWords {
  Token question;
  Token answer;

  friend bool operator==(const PromptingWords&, const PromptingWords&) = default;
};

class PromptTemplate {
public:
  static constexpr std::size_t unlimited_length = static_cast<std::size_t>(-1);

  /// Word-free variants never store prompting words, whatever is passed in.
  PromptTemplate(TemplateVariant variant, std::map<LanguageCode, PromptingWords> words = {})
      : variant_(variant) {
    if (uses_prompting_words(variant)) {
      words_ = std::move(words);
    }
  }

  TemplateVariant variant() const noexcept { return variant_; }
  const std::map<LanguageCode, PromptingWords>& prompting_words() const noexcept { return words_; }

  Token period = ".";
  Token question_mark = "?";
  Token colon = ":";

  /// Language whose prompting words are used when the prompt is applied to `language`.
  LanguageCode prompting_language_for(const LanguageCode& language) const {
    return variant_ == TemplateVariant::no_template_translation ? source_language : language;
  }

  const PromptingWords& words_for(const LanguageCode& apply_language) const {
    const LanguageCode lang = prompting_language_for(apply_language);
    auto it = words_.find(lang);
    if (it == words_.end()) {
      throw configuration_error("template variant '" + std::string(to_string(variant_)) +
                                "' needs prompting words for language " + lang);
    }
    return it->second;
  }

  /// Number of template-owned tokens (everything except sentence A and B).
  std::size_t scaffold_size() const { return uses_prompting_words(variant_) ? 8 : 4; }

private:
  TemplateVariant variant_;
  std::map<LanguageCode, PromptingWords> words_;
};

namespace detail {

// Longest-first: drop the last token of the longer sentence (A on ties) until
// both fit. Each sentence keeps at least one token.
inline void truncate_pair(TokenSequence& a, TokenSequence& b, std::size_t budget) {
  if (budget < 2) {
    throw configuration_error("max sequence length leaves no room for the sentence pair");
  }
  while (a.size() + b.size() > budget) {
    if (a.size() >= b.size()) {
      a.pop_back();
    } else {
      b.pop_back();
    }
  }
}

} // namespace detail

/// Lay out `pair` as a cloze prompt for `apply_language`.
///
/// Word-free variants give  A . B ? <mask> .
/// Variants with prompting words give  A . Q : B ? Ans : <mask> .
inline PromptedExample build_prompt(const LabeledPair& pair, const PromptTemplate& tmpl,
                                    const LanguageCode& apply_language,
                                    std::size_t max_length = PromptTemplate::unlimited_length) {
  if (pair.sentence_a.empty() || pair.sentence_b.empty()) {
    throw input_error("cannot build a prompt from an empty sentence");
  }
  const bool with_words = uses_prompting_words(tmpl.variant());
  const PromptingWords* words = with_words ? &tmpl.words_for(apply_language) : nullptr;

  TokenSequence a = pair.sentence_a;
  TokenSequence b = pair.sentence_b;
  if (max_length != PromptTemplate::unlimited_length) {
    if (max_length <= tmpl.scaffold_size()) {
      throw configuration_error("max sequence length " + std::to_string(max_length) +
                                " cannot hold the prompt scaffold");
    }
    detail::truncate_pair(a, b, max_length - tmpl.scaffold_size());
  }

  PromptedExample out;
  out.label = pair.label;
  out.language = pair.language;
  out.tokens.reserve(a.size() + b.size() + tmpl.scaffold_size());
  out.tokens.insert(out.tokens.end(), a.begin(), a.end());
  out.tokens.push_back(tmpl.period);
  if (words) {
    out.tokens.push_back(words->question);
    out.tokens.push_back(tmpl.colon);
  }
  out.tokens.insert(out.tokens.end(), b.begin(), b.end());
  out.tokens.push_back(tmpl.question_mark);
  if (words) {
    out.tokens.push_back(words->answer);
    out.tokens.push_back(tmpl.colon);
  }
  out.mask_position = out.tokens.size();
  out.tokens.push_back(mask_token);
  out.tokens.push_back(tmpl.period);
  return out;
}

/// Human-readable prompt text; a colon attaches to the preceding word.
inline std::string render(const TokenSequence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0 && tokens[i] != ":") {
      out.push_back(' ');
    }
    out += tokens[i];
  }
  return out;
}

} // namespace xlprompt
