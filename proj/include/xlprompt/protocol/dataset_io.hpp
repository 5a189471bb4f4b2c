#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlprompt/core/error.hpp"
#include "xlprompt/prompt/types.hpp"
#include "xlprompt/prompt/verbalizer.hpp"

namespace xlprompt {

// Shared dataset format: one JSON object per line,
//   {"sentence_a": "w3 w7 w9", "sentence_b": "w3 w9", "label": 0, "language": "EN"}
// Sentences are whitespace-tokenized strings.

inline nlohmann::ordered_json to_json(const LabeledPair& p) {
  nlohmann::ordered_json j;
  j["sentence_a"] = join_tokens(p.sentence_a);
  j["sentence_b"] = join_tokens(p.sentence_b);
  j["label"] = p.label;
  j["language"] = p.language;
  return j;
}

inline void write_dataset(const std::vector<LabeledPair>& pairs, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw environment_error("cannot write dataset " + path.string());
  }
  for (const auto& p : pairs) {
    out << to_json(p).dump() << '\n';
  }
}

inline std::vector<LabeledPair> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw environment_error("cannot open dataset " + path.string());
  }
  std::vector<LabeledPair> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      const auto j = nlohmann::json::parse(line);
      LabeledPair p;
      p.sentence_a = split_tokens(j.at("sentence_a").get<std::string>());
      p.sentence_b = split_tokens(j.at("sentence_b").get<std::string>());
      p.label = j.at("label").get<std::size_t>();
      p.language = j.at("language").get<std::string>();
      if (p.sentence_a.empty() || p.sentence_b.empty()) {
        throw input_error("empty sentence");
      }
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw input_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const input_error& e) {
      throw input_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) {
      break;
    }
    start = tab + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') {
    out.back().pop_back();
  }
  return out;
}

inline std::vector<LabeledPair> read_tsv_pairs(const std::filesystem::path& path, const LanguageCode& language,
                                               const std::vector<std::string>& columns,
                                               const std::function<std::size_t(const std::string&)>& to_label) {
  std::ifstream in(path);
  if (!in) {
    throw environment_error("cannot open " + path.string());
  }
  std::string header;
  if (!std::getline(in, header)) {
    throw input_error(path.string() + " is empty");
  }
  const auto names = split_tabs(header);
  std::vector<std::size_t> index;
  for (const auto& c : columns) {
    auto it = std::find(names.begin(), names.end(), c);
    if (it == names.end()) {
      throw input_error(path.string() + " lacks column '" + c + "'");
    }
    index.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  std::vector<LabeledPair> out;
  std::size_t line_no = 1;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    const auto fields = split_tabs(line);
    for (std::size_t i : index) {
      if (i >= fields.size()) {
        throw input_error(path.string() + ":" + std::to_string(line_no) + ": missing fields");
      }
    }
    LabeledPair p;
    p.sentence_a = split_tokens(fields[index[0]]);
    p.sentence_b = split_tokens(fields[index[1]]);
    p.label = to_label(fields[index[2]]);
    p.language = language;
    if (p.sentence_a.empty() || p.sentence_b.empty()) {
      continue;
    }
    out.push_back(std::move(p));
  }
  return out;
}

} // namespace detail

/// XNLI-style TSV with a header naming "premise", "hypothesis" and "label"
/// (label given by name, e.g. "entailment").
inline std::vector<LabeledPair> load_xnli_tsv(const std::filesystem::path& path, const LanguageCode& language,
                                              const MultilingualVerbalizer& mv) {
  return detail::read_tsv_pairs(path, language, {"premise", "hypothesis", "label"},
                                [&](const std::string& name) { return mv.label_index(name); });
}

/// PAWS-X-style TSV: "sentence1", "sentence2", "label" with 1 = paraphrase.
/// Paraphrase maps to class 0 to match the bundled verbalizer order.
inline std::vector<LabeledPair> load_pawsx_tsv(const std::filesystem::path& path, const LanguageCode& language) {
  return detail::read_tsv_pairs(path, language, {"sentence1", "sentence2", "label"}, [&](const std::string& v) {
    if (v == "1") {
      return std::size_t{0};
    }
    if (v == "0") {
      return std::size_t{1};
    }
    throw input_error("PAWS-X label must be 0 or 1, got '" + v + "'");
  });
}

} // namespace xlprompt
