#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "xlprompt/core/error.hpp"
#include "xlprompt/core/linalg.hpp"
#include "xlprompt/objectives/losses.hpp"

namespace xlprompt {

/// The five ways of turning mask-slot probabilities into a label.
enum class StrategyId : int {
  en_verbalizer = 1,     ///< p[V_EN(y)]
  target_verbalizer = 2, ///< p[V_target(y)]
  max_multi = 3,         ///< max over languages of p[V_l(y)]
  sum_multi = 4,         ///< sum over languages of p[V_l(y)]
  bilingual = 5,         ///< p[V_EN(y)] + p[V_target(y)]
};

inline constexpr std::array<StrategyId, 5> all_strategies = {StrategyId::en_verbalizer, StrategyId::target_verbalizer,
                                                             StrategyId::max_multi, StrategyId::sum_multi,
                                                             StrategyId::bilingual};

inline StrategyId strategy_from_int(int id) {
  if (id < 1 || id > 5) {
    throw configuration_error("inference strategy must be 1..5, got " + std::to_string(id));
  }
  return static_cast<StrategyId>(id);
}

inline int to_int(StrategyId s) { return static_cast<int>(s); }

/// Probability of each label's token, per language: block[lang][label].
using LabelTokenProbabilities = std::map<LanguageCode, std::vector<double>>;

struct LabelScores {
  std::vector<double> scores;
  std::size_t label = 0;
  StrategyId strategy = StrategyId::en_verbalizer;
  LanguageCode target_language;
};

/// Extract the label-token block from a full-vocabulary probability vector.
inline LabelTokenProbabilities label_token_probabilities(const Vector& probabilities, const VerbalizerIds& mv) {
  LabelTokenProbabilities block;
  for (const auto& lang : mv.languages()) {
    std::vector<double> row;
    for (TokenId t : mv.at(lang)) {
      if (t < 0 || t >= probabilities.size()) {
        throw input_error("verbalizer token id outside the logit vector");
      }
      row.push_back(probabilities[t]);
    }
    block.emplace(lang, std::move(row));
  }
  return block;
}

namespace detail {

inline const std::vector<double>& block_row(const LabelTokenProbabilities& block, const LanguageCode& lang) {
  auto it = block.find(lang);
  if (it == block.end()) {
    throw configuration_error("no verbalizer probabilities for language " + lang);
  }
  return it->second;
}

// Strict comparison keeps the lowest index on ties.
inline std::size_t argmax_lowest(const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t y = 1; y < scores.size(); ++y) {
    if (scores[y] > scores[best]) {
      best = y;
    }
  }
  return best;
}

} // namespace detail

/// Score labels from a label-token probability block.
inline LabelScores predict_from_block(const LabelTokenProbabilities& block, StrategyId strategy,
                                      const LanguageCode& target_language) {
  const auto& en = detail::block_row(block, source_language);
  const std::size_t classes = en.size();
  LabelScores out;
  out.strategy = strategy;
  out.target_language = target_language;
  out.scores.assign(classes, 0.0);
  switch (strategy) {
  case StrategyId::en_verbalizer:
    out.scores = en;
    break;
  case StrategyId::target_verbalizer:
    out.scores = detail::block_row(block, target_language);
    break;
  case StrategyId::max_multi:
    for (const auto& [lang, row] : block) {
      for (std::size_t y = 0; y < classes; ++y) {
        out.scores[y] = std::max(out.scores[y], row.at(y));
      }
    }
    break;
  case StrategyId::sum_multi:
    for (const auto& [lang, row] : block) {
      for (std::size_t y = 0; y < classes; ++y) {
        out.scores[y] += row.at(y);
      }
    }
    break;
  case StrategyId::bilingual: {
    const auto& target = detail::block_row(block, target_language);
    for (std::size_t y = 0; y < classes; ++y) {
      out.scores[y] = en[y] + target.at(y);
    }
    break;
  }
  }
  out.label = detail::argmax_lowest(out.scores);
  return out;
}

/// Predict from full-vocabulary logits; probabilities are the softmax over the whole vocabulary.
inline LabelScores predict(const Vector& logits, StrategyId strategy, const VerbalizerIds& mv,
                           const LanguageCode& target_language) {
  return predict_from_block(label_token_probabilities(softmax(logits), mv), strategy, target_language);
}

/// All five strategies from one softmax.
inline std::array<LabelScores, 5> predict_all(const LabelTokenProbabilities& block, const LanguageCode& target_language) {
  std::array<LabelScores, 5> out;
  for (std::size_t s = 0; s < all_strategies.size(); ++s) {
    out[s] = predict_from_block(block, all_strategies[s], target_language);
  }
  return out;
}

inline std::array<LabelScores, 5> predict_all(const Vector& logits, const VerbalizerIds& mv,
                                              const LanguageCode& target_language) {
  return predict_all(label_token_probabilities(softmax(logits), mv), target_language);
}

} // namespace xlprompt
