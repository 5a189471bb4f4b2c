#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlprompt/core/error.hpp"
#include "xlprompt/inference/strategies.hpp"
#include "xlprompt/objectives/losses.hpp"
#include "xlprompt/prompt/template.hpp"

namespace xlprompt {

enum class Method {
  ft,
  up,
  ours,
  ours_no_mv,
  ours_no_mixup,
  zhao_full,
  no_template_translation,
  no_verbalizer_translation,
  no_prompting_words,
};

inline constexpr std::array<Method, 9> all_methods = {
    Method::ft,        Method::up,
    Method::ours,      Method::ours_no_mv,
    Method::ours_no_mixup, Method::zhao_full,
    Method::no_template_translation, Method::no_verbalizer_translation,
    Method::no_prompting_words};

inline std::string_view to_string(Method m) {
  switch (m) {
  case Method::ft: return "FT";
  case Method::up: return "UP";
  case Method::ours: return "OURS";
  case Method::ours_no_mv: return "OURS_NO_MV";
  case Method::ours_no_mixup: return "OURS_NO_MIXUP";
  case Method::zhao_full: return "ZHAO_FULL";
  case Method::no_template_translation: return "NO_TEMPLATE_TRANSLATION";
  case Method::no_verbalizer_translation: return "NO_VERBALIZER_TRANSLATION";
  case Method::no_prompting_words: return "NO_PROMPTING_WORDS";
  }
  return "UNKNOWN";
}

inline Method parse_method(std::string_view name) {
  for (auto m : all_methods) {
    if (to_string(m) == name) {
      return m;
    }
  }
  throw configuration_error("unknown method '" + std::string(name) + "'");
}

/// How a method trains and infers.
struct MethodTraits {
  bool finetune = false;                            ///< classification head instead of prompting
  TemplateVariant variant = TemplateVariant::universal;
  bool multilingual_verbalizer = false;             ///< train against every language in the set
  bool mixup = false;
  /// Pilot variants fix the inference verbalizer by their design; others use the configured strategy.
  bool variant_decides_inference = false;
};

inline MethodTraits traits_of(Method m) {
  switch (m) {
  case Method::ft: return {true, TemplateVariant::universal, false, false, false};
  case Method::up: return {false, TemplateVariant::universal, false, false, false};
  case Method::ours: return {false, TemplateVariant::universal, true, true, false};
  case Method::ours_no_mv: return {false, TemplateVariant::universal, false, true, false};
  case Method::ours_no_mixup: return {false, TemplateVariant::universal, true, false, false};
  case Method::zhao_full: return {false, TemplateVariant::zhao_full, false, false, true};
  case Method::no_template_translation: return {false, TemplateVariant::no_template_translation, false, false, true};
  case Method::no_verbalizer_translation:
    return {false, TemplateVariant::no_verbalizer_translation, false, false, true};
  case Method::no_prompting_words: return {false, TemplateVariant::no_prompting_words, false, false, true};
  }
  throw configuration_error("unknown method");
}

/// One training run. Defaults are the full-scale hyperparameters.
struct RunConfig {
  Method method = Method::ours;
  std::size_t k = 16;
  std::uint64_t seed = 0;
  double learning_rate = 1e-5;
  std::size_t batch_size = 8;
  std::size_t grad_accumulation = 4;
  std::size_t epochs = 50;
  double alpha = 1.2;
  std::size_t max_length = 256;
  std::vector<LanguageCode> languages; ///< verbalizer set for training; empty = every language in the lexicon
  StrategyId strategy = StrategyId::en_verbalizer;
  double mixup_weight = 1.0;
  PairingMode pairing = PairingMode::disjoint;

  void validate() const {
    if (k == 0) {
      throw configuration_error("k must be positive");
    }
    if (batch_size == 0 || grad_accumulation == 0) {
      throw configuration_error("batch_size and grad_accumulation must be positive");
    }
    if (!(learning_rate > 0.0)) {
      throw configuration_error("learning rate must be positive");
    }
    if (!(alpha > 0.0)) {
      throw configuration_error("alpha must be positive");
    }
    if (!(mixup_weight >= 0.0)) {
      throw configuration_error("mixup_weight must be non-negative");
    }
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"method", std::string(to_string(c.method))},
                     {"k", c.k},
                     {"seed", c.seed},
                     {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"grad_accumulation", c.grad_accumulation},
                     {"epochs", c.epochs},
                     {"alpha", c.alpha},
                     {"max_length", c.max_length},
                     {"languages", c.languages},
                     {"strategy", to_int(c.strategy)},
                     {"mixup_weight", c.mixup_weight},
                     {"pairing", std::string(to_string(c.pairing))}};
}

/// Fields absent from `j` keep their current values in `c`.
inline void merge_json(const nlohmann::json& j, RunConfig& c) {
  try {
    if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
    if (j.contains("k")) c.k = j.at("k").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("grad_accumulation")) c.grad_accumulation = j.at("grad_accumulation").get<std::size_t>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("max_length")) c.max_length = j.at("max_length").get<std::size_t>();
    if (j.contains("languages")) c.languages = j.at("languages").get<std::vector<LanguageCode>>();
    if (j.contains("strategy")) c.strategy = strategy_from_int(j.at("strategy").get<int>());
    if (j.contains("mixup_weight")) c.mixup_weight = j.at("mixup_weight").get<double>();
    if (j.contains("pairing")) c.pairing = parse_pairing_mode(j.at("pairing").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw configuration_error(std::string("bad run configuration: ") + e.what());
  }
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c = RunConfig{};
  merge_json(j, c);
}

} // namespace xlprompt
