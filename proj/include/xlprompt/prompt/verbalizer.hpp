#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlprompt/core/error.hpp"
#include "xlprompt/model/vocabulary.hpp"
#include "xlprompt/prompt/template.hpp"
#include "xlprompt/prompt/types.hpp"

namespace xlprompt {

/// Label index -> answer token for one language.
struct Verbalizer {
  LanguageCode language;
  std::vector<Token> tokens;

  std::size_t num_classes() const noexcept { return tokens.size(); }

  const Token& token_for(std::size_t label) const {
    if (label >= tokens.size()) {
      throw input_error("label " + std::to_string(label) + " has no verbalizer token in " + language);
    }
    return tokens[label];
  }

  friend bool operator==(const Verbalizer&, const Verbalizer&) = default;
};

/// A family of verbalizers sharing one label set; always contains the source language.
class MultilingualVerbalizer {
public:
  MultilingualVerbalizer() = default;

  MultilingualVerbalizer(std::vector<std::string> label_names, std::vector<Verbalizer> verbalizers)
      : label_names_(std::move(label_names)) {
    std::vector<std::string> problems;
    for (auto& v : verbalizers) {
      if (v.tokens.size() != label_names_.size()) {
        problems.push_back(v.language + ": expected " + std::to_string(label_names_.size()) +
                           " labels, found " + std::to_string(v.tokens.size()));
      }
      std::set<Token> seen;
      for (std::size_t y = 0; y < v.tokens.size(); ++y) {
        if (v.tokens[y].empty()) {
          problems.push_back(v.language + ": empty token for label " + label_name(y));
        } else if (!seen.insert(v.tokens[y]).second) {
          problems.push_back(v.language + ": token '" + v.tokens[y] + "' is used by more than one label");
        }
        if (v.tokens[y].find_first_of(" \t\n\r") != Token::npos) {
          problems.push_back(v.language + ": token '" + v.tokens[y] + "' for label " + label_name(y) +
                             " spans several words");
        }
      }
      if (by_language_.contains(v.language)) {
        problems.push_back(v.language + ": duplicate language record");
        continue;
      }
      order_.push_back(v.language);
      by_language_.emplace(v.language, std::move(v));
    }
    if (!by_language_.contains(source_language)) {
      problems.push_back("no verbalizer for the source language " + source_language);
    }
    if (!problems.empty()) {
      throw validation_error("invalid multilingual verbalizer", std::move(problems));
    }
  }

  const std::vector<std::string>& label_names() const noexcept { return label_names_; }
  std::size_t num_classes() const noexcept { return label_names_.size(); }

  /// Languages in file order.
  const std::vector<LanguageCode>& languages() const noexcept { return order_; }

  bool contains(const LanguageCode& lang) const { return by_language_.contains(lang); }

  const Verbalizer& at(const LanguageCode& lang) const {
    auto it = by_language_.find(lang);
    if (it == by_language_.end()) {
      throw configuration_error("no verbalizer for language " + lang);
    }
    return it->second;
  }

  /// The same verbalizer restricted to `langs` (order kept as given).
  MultilingualVerbalizer restricted_to(const std::vector<LanguageCode>& langs) const {
    std::vector<Verbalizer> subset;
    for (const auto& l : langs) {
      subset.push_back(at(l));
    }
    return MultilingualVerbalizer(label_names_, std::move(subset));
  }

  std::string label_name(std::size_t y) const {
    return y < label_names_.size() ? label_names_[y] : "#" + std::to_string(y);
  }

  std::size_t label_index(const std::string& name) const {
    auto it = std::find(label_names_.begin(), label_names_.end(), name);
    if (it == label_names_.end()) {
      throw input_error("unknown label '" + name + "'");
    }
    return static_cast<std::size_t>(it - label_names_.begin());
  }

private:
  std::vector<std::string> label_names_;
  std::vector<LanguageCode> order_;
  std::map<LanguageCode, Verbalizer> by_language_;
};

/// Verbalizer used at inference for each template variant.
///
/// Universal prompting and "without verbalizer translation" keep the source
/// verbalizer for every target; the other variants switch to the target's.
inline const Verbalizer& inference_verbalizer_for(TemplateVariant variant, const LanguageCode& target,
                                                  const MultilingualVerbalizer& mv) {
  if (!mv.contains(source_language)) {
    throw configuration_error("multilingual verbalizer lacks " + source_language);
  }
  if (variant == TemplateVariant::universal || variant == TemplateVariant::no_verbalizer_translation) {
    return mv.at(source_language);
  }
  if (!mv.contains(target)) {
    throw configuration_error("variant '" + std::string(to_string(variant)) + "' needs a verbalizer for " +
                              target);
  }
  return mv.at(target);
}

/// Every verbalizer token must be exactly one token of `tokenizer`.
inline void validate_against(const MultilingualVerbalizer& mv, const Tokenizer& tokenizer) {
  std::vector<std::string> problems;
  for (const auto& lang : mv.languages()) {
    const auto& v = mv.at(lang);
    for (std::size_t y = 0; y < v.tokens.size(); ++y) {
      const auto ids = tokenizer.tokenize_word(v.tokens[y]);
      if (ids.size() != 1) {
        problems.push_back(lang + ": token '" + v.tokens[y] + "' (" + mv.label_name(y) + ") splits into " +
                           std::to_string(ids.size()) + " subtokens");
      } else if (ids.front() == tokenizer.vocabulary().unk_id()) {
        problems.push_back(lang + ": token '" + v.tokens[y] + "' (" + mv.label_name(y) +
                           ") is not in the backend vocabulary");
      }
    }
  }
  if (!problems.empty()) {
    throw validation_error("verbalizer tokens are not single backend tokens", std::move(problems));
  }
}

/// Verbalizers plus the per-language prompting words shipped in the same file.
struct TaskLexicon {
  std::string task;
  MultilingualVerbalizer verbalizers;
  std::map<LanguageCode, PromptingWords> prompting_words;

  PromptTemplate make_template(TemplateVariant variant) const { return {variant, prompting_words}; }
};

/// Parse the JSON lexicon format:
///
///   { "task": "xnli", "labels": ["entailment", ...],
///     "languages": [ { "code": "EN",
///                      "verbalizer": { "entailment": "yes", ... },
///                      "prompting_words": { "question": "Question", "answer": "Answer" } }, ... ] }
///
/// "prompting_words" is optional per record.
inline TaskLexicon parse_task_lexicon(const nlohmann::json& doc, const Tokenizer* tokenizer = nullptr) {
  TaskLexicon out;
  std::vector<std::string> problems;
  try {
    out.task = doc.value("task", "");
    const auto labels = doc.at("labels").get<std::vector<std::string>>();
    std::vector<Verbalizer> verbalizers;
    for (const auto& record : doc.at("languages")) {
      Verbalizer v;
      v.language = record.at("code").get<std::string>();
      v.tokens.assign(labels.size(), Token{});
      for (const auto& [label, token] : record.at("verbalizer").items()) {
        auto it = std::find(labels.begin(), labels.end(), label);
        if (it == labels.end()) {
          problems.push_back(v.language + ": unknown label '" + label + "'");
          continue;
        }
        v.tokens[static_cast<std::size_t>(it - labels.begin())] = token.get<std::string>();
      }
      for (std::size_t y = 0; y < labels.size(); ++y) {
        if (v.tokens[y].empty()) {
          problems.push_back(v.language + ": missing token for label '" + labels[y] + "'");
        }
      }
      if (record.contains("prompting_words")) {
        const auto& pw = record.at("prompting_words");
        out.prompting_words[v.language] = {pw.at("question").get<std::string>(),
                                           pw.at("answer").get<std::string>()};
      }
      verbalizers.push_back(std::move(v));
    }
    if (!problems.empty()) {
      throw validation_error("invalid verbalizer file", std::move(problems));
    }
    out.verbalizers = MultilingualVerbalizer(labels, std::move(verbalizers));
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("malformed verbalizer file: ") + e.what());
  }
  if (tokenizer != nullptr) {
    validate_against(out.verbalizers, *tokenizer);
  }
  return out;
}

inline nlohmann::ordered_json to_json(const TaskLexicon& lex) {
  nlohmann::ordered_json doc;
  doc["task"] = lex.task;
  doc["labels"] = lex.verbalizers.label_names();
  auto& records = doc["languages"] = nlohmann::ordered_json::array();
  for (const auto& lang : lex.verbalizers.languages()) {
    nlohmann::ordered_json record;
    record["code"] = lang;
    const auto& v = lex.verbalizers.at(lang);
    for (std::size_t y = 0; y < v.tokens.size(); ++y) {
      record["verbalizer"][lex.verbalizers.label_name(y)] = v.tokens[y];
    }
    if (auto it = lex.prompting_words.find(lang); it != lex.prompting_words.end()) {
      record["prompting_words"] = {{"question", it->second.question}, {"answer", it->second.answer}};
    }
    records.push_back(std::move(record));
  }
  return doc;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw environment_error("cannot open " + path.string());
  }
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw input_error("cannot parse " + path.string() + ": " + e.what());
  }
}

inline TaskLexicon load_task_lexicon(const std::filesystem::path& path, const Tokenizer* tokenizer = nullptr) {
  return parse_task_lexicon(read_json_file(path), tokenizer);
}

inline MultilingualVerbalizer load_verbalizer_file(const std::filesystem::path& path,
                                                   const Tokenizer* tokenizer = nullptr) {
  return load_task_lexicon(path, tokenizer).verbalizers;
}

} // namespace xlprompt
