#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlprompt/core/error.hpp"
#include "xlprompt/inference/strategies.hpp"

namespace xlprompt {

enum class DumpMode { full, restricted };

/// One evaluated prompt: gold label, language and either logits or the label-token block.
struct LogitRecord {
  std::size_t label = 0;
  LanguageCode language;
  std::optional<std::vector<double>> logits;
  std::optional<LabelTokenProbabilities> label_token_probabilities;
};

inline nlohmann::ordered_json to_json(const LogitRecord& r) {
  nlohmann::ordered_json j;
  j["label"] = r.label;
  j["language"] = r.language;
  if (r.logits) {
    j["logits"] = *r.logits;
  }
  if (r.label_token_probabilities) {
    j["label_token_probs"] = *r.label_token_probabilities;
  }
  return j;
}

inline LogitRecord logit_record_from_json(const nlohmann::json& j) {
  LogitRecord r;
  r.label = j.at("label").get<std::size_t>();
  r.language = j.at("language").get<std::string>();
  if (j.contains("logits")) {
    r.logits = j.at("logits").get<std::vector<double>>();
  }
  if (j.contains("label_token_probs")) {
    r.label_token_probabilities = j.at("label_token_probs").get<LabelTokenProbabilities>();
  }
  if (!r.logits && !r.label_token_probabilities) {
    throw input_error("logit record has neither logits nor label_token_probs");
  }
  return r;
}

inline void write_logit_dump(const std::vector<LogitRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw environment_error("cannot write logit dump " + path.string());
  }
  for (const auto& r : records) {
    out << to_json(r).dump() << '\n';
  }
}

inline std::vector<LogitRecord> read_logit_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw environment_error("cannot open logit dump " + path.string());
  }
  std::vector<LogitRecord> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      out.push_back(logit_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw input_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const input_error& e) {
      throw input_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct StrategyComparison {
  std::array<std::array<double, 5>, 5> agreement{}; ///< fraction of records where strategies a and b agree
  std::array<double, 5> accuracy{};
  std::size_t records = 0;
};

/// Run all five strategies on every record; each record's language is its target.
inline StrategyComparison compare_strategies(const std::vector<LogitRecord>& dump, const VerbalizerIds* mv = nullptr) {
  if (dump.empty()) {
    throw input_error("logit dump is empty");
  }
  StrategyComparison out;
  std::array<std::array<std::size_t, 5>, 5> agree{};
  std::array<std::size_t, 5> correct{};
  for (const auto& r : dump) {
    LabelTokenProbabilities block;
    if (r.label_token_probabilities) {
      block = *r.label_token_probabilities;
    } else {
      if (mv == nullptr) {
        throw input_error("full-logit records need the verbalizer to locate label tokens");
      }
      block = label_token_probabilities(softmax(from_std(*r.logits)), *mv);
    }
    const auto preds = predict_all(block, r.language);
    for (std::size_t a = 0; a < 5; ++a) {
      if (preds[a].label == r.label) {
        ++correct[a];
      }
      for (std::size_t b = 0; b < 5; ++b) {
        if (preds[a].label == preds[b].label) {
          ++agree[a][b];
        }
      }
    }
  }
  out.records = dump.size();
  const double n = static_cast<double>(dump.size());
  for (std::size_t a = 0; a < 5; ++a) {
    out.accuracy[a] = static_cast<double>(correct[a]) / n;
    for (std::size_t b = 0; b < 5; ++b) {
      out.agreement[a][b] = static_cast<double>(agree[a][b]) / n;
    }
  }
  return out;
}

} // namespace xlprompt
