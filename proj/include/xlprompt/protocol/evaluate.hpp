#pragma once

#include <string>
#include <utility>
#include <vector>

#include "xlprompt/core/error.hpp"
#include "xlprompt/inference/logit_dump.hpp"
#include "xlprompt/inference/strategies.hpp"
#include "xlprompt/model/backend.hpp"
#include "xlprompt/objectives/losses.hpp"
#include "xlprompt/prompt/template.hpp"
#include "xlprompt/prompt/verbalizer.hpp"
#include "xlprompt/protocol/run_config.hpp"

namespace xlprompt {

using LanguageTestSets = std::vector<std::pair<LanguageCode, std::vector<LabeledPair>>>;

struct LanguageAccuracy {
  LanguageCode language;
  double accuracy = 0.0;
  std::size_t examples = 0;
};

/// Predicts labels for one method under one inference strategy.
template <MaskedLanguageModel Backend>
class Predictor {
public:
  Predictor(const Backend& backend, const TaskLexicon& lexicon, Method method, StrategyId strategy,
            std::size_t max_length)
      : backend_(backend), lexicon_(lexicon), traits_(traits_of(method)), strategy_(strategy),
        max_length_(max_length), template_(lexicon.make_template(traits_.variant)) {
    if (!traits_.finetune) {
      ids_ = VerbalizerIds(lexicon.verbalizers, backend.tokenizer());
    }
  }

  /// Strategy actually applied for `target`; pilot variants pick EN or target verbalizer by design.
  StrategyId strategy_for(const LanguageCode& target) const {
    if (!traits_.variant_decides_inference) {
      return strategy_;
    }
    const auto& v = inference_verbalizer_for(traits_.variant, target, lexicon_.verbalizers);
    return v.language == source_language ? StrategyId::en_verbalizer : StrategyId::target_verbalizer;
  }

  /// Mask-slot logits for a pair prompted in its own language.
  Vector mask_logits(const LabeledPair& pair) const {
    const auto prompt = build_prompt(pair, template_, pair.language, max_length_);
    const EncodedExample ex = backend_.encode(prompt);
    const auto reps = backend_.encode_mask(std::span<const EncodedExample>(&ex, 1));
    return backend_.mlm_logits(reps.front());
  }

  std::size_t predict(const LabeledPair& pair, LogitRecord* record = nullptr, DumpMode mode = DumpMode::full) const {
    if (traits_.finetune) {
      const EncodedExample ex = backend_.encode_pair(pair);
      const Matrix logits = backend_.classify_logits(std::span<const EncodedExample>(&ex, 1));
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < logits.cols(); ++c) {
        if (logits(0, c) > logits(0, best)) {
          best = c;
        }
      }
      return static_cast<std::size_t>(best);
    }
    const Vector logits = mask_logits(pair);
    const auto block = label_token_probabilities(softmax(logits), ids_);
    if (record != nullptr) {
      record->label = pair.label;
      record->language = pair.language;
      if (mode == DumpMode::full) {
        record->logits = to_std(logits);
      } else {
        record->label_token_probabilities = block;
      }
    }
    return predict_from_block(block, strategy_for(pair.language), pair.language).label;
  }

  double accuracy(const std::vector<LabeledPair>& pairs, std::vector<LogitRecord>* dump = nullptr,
                  DumpMode mode = DumpMode::full) const {
    if (pairs.empty()) {
      throw input_error("cannot evaluate on an empty set");
    }
    std::size_t correct = 0;
    for (const auto& p : pairs) {
      LogitRecord record;
      const bool keep = dump != nullptr && !traits_.finetune;
      if (predict(p, keep ? &record : nullptr, mode) == p.label) {
        ++correct;
      }
      if (keep) {
        dump->push_back(std::move(record));
      }
    }
    return static_cast<double>(correct) / static_cast<double>(pairs.size());
  }

private:
  const Backend& backend_;
  const TaskLexicon& lexicon_;
  MethodTraits traits_;
  StrategyId strategy_;
  std::size_t max_length_;
  PromptTemplate template_;
  VerbalizerIds ids_;
};

/// Per-language accuracy of a trained model, in the order of `test_sets`.
template <class Backend>
std::vector<LanguageAccuracy> evaluate(const Backend& backend, const LanguageTestSets& test_sets, Method method,
                                       StrategyId strategy, const TaskLexicon& lexicon, std::size_t max_length,
                                       std::vector<LogitRecord>* dump = nullptr, DumpMode mode = DumpMode::full) {
  if (test_sets.empty()) {
    throw input_error("no test sets to evaluate");
  }
  const Predictor<Backend> predictor(backend, lexicon, method, strategy, max_length);
  std::vector<LanguageAccuracy> out;
  for (const auto& [lang, pairs] : test_sets) {
    if (pairs.empty()) {
      throw input_error("test set for " + lang + " is empty");
    }
    out.push_back({lang, predictor.accuracy(pairs, dump, mode), pairs.size()});
  }
  return out;
}

} // namespace xlprompt
