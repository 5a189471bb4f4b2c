#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <numeric>
#include <string>
#include <vector>

#include "xlprompt/core/error.hpp"
#include "xlprompt/core/rng.hpp"
#include "xlprompt/model/adam.hpp"
#include "xlprompt/model/backend.hpp"
#include "xlprompt/objectives/losses.hpp"
#include "xlprompt/protocol/evaluate.hpp"
#include "xlprompt/protocol/run_config.hpp"
#include "xlprompt/protocol/shots.hpp"

namespace xlprompt {

/// One optimizer micro-batch in the training log.
struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0; ///< micro-batch counter over the run
  LossBreakdown loss;
};

template <class Backend>
struct TrainResult {
  Backend checkpoint;            ///< parameters of the selected epoch
  std::vector<double> dev_curve; ///< index 0 = before training, index e = after epoch e
  std::size_t best_epoch = 0;
  double best_dev_accuracy = 0.0;
  std::vector<StepRecord> steps;
};

namespace detail {

/// Loss and gradient of one micro-batch.
template <TrainableMaskedLanguageModel Backend>
class MicroBatchObjective {
public:
  MicroBatchObjective(const Backend& backend, const RunConfig& config, const VerbalizerIds* ids,
                      std::vector<LanguageCode> languages)
      : backend_(backend), config_(config), traits_(traits_of(config.method)), ids_(ids),
        languages_(std::move(languages)) {}

  LossBreakdown accumulate(std::span<const EncodedExample> batch, Rng& rng, ParameterSet& grads) const {
    return traits_.finetune ? finetune(batch, grads) : prompting(batch, rng, grads);
  }

private:
  LossBreakdown finetune(std::span<const EncodedExample> batch, ParameterSet& grads) const {
    LossBreakdown out;
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch) {
      const auto trace = backend_.trace(ex);
      const Vector pooled = backend_.pooled_representation(trace);
      Vector d_logits;
      out.real_loss += scale * finetune_loss(backend_.class_logits(pooled), ex.label, &d_logits);
      d_logits *= scale;
      backend_.backward_pooled(trace, backend_.class_backward(pooled, d_logits, grads), grads);
    }
    out.total = out.real_loss;
    return out;
  }

  LossBreakdown prompting(std::span<const EncodedExample> batch, Rng& rng, ParameterSet& grads) const {
    LossBreakdown out;
    std::vector<typename Backend::Trace> traces;
    std::vector<Vector> reps;
    std::vector<std::size_t> labels;
    traces.reserve(batch.size());
    for (const auto& ex : batch) {
      traces.push_back(backend_.trace(ex));
      reps.push_back(backend_.mask_representation(traces.back(), ex));
      labels.push_back(ex.label);
    }
    std::vector<Vector> d_reps(batch.size(), Vector::Zero(static_cast<Eigen::Index>(backend_.hidden_dim())));

    const double scale = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Vector d_logits;
      out.real_loss +=
          scale * multilingual_verbalizer_loss(backend_.mlm_logits(reps[i]), labels[i], *ids_, languages_, &d_logits);
      d_logits *= scale;
      d_reps[i] += backend_.mlm_backward(reps[i], d_logits, grads);
    }
    out.total = out.real_loss;

    if (traits_.mixup) {
      const auto virtuals = pair_batch(reps, labels, config_.alpha, rng, config_.pairing);
      if (!virtuals.empty()) {
        const double vscale = 1.0 / static_cast<double>(virtuals.size());
        for (const auto& v : virtuals) {
          Vector d_logits;
          out.mixup_loss += vscale * mixup_loss(backend_.mlm_logits(v.representation), v.lambda, v.label_i,
                                                v.label_j, *ids_, languages_, &d_logits);
          out.lambdas.push_back(v.lambda);
          if (config_.mixup_weight == 0.0) {
            continue;
          }
          d_logits *= vscale * config_.mixup_weight;
          const Vector d_virtual = backend_.mlm_backward(v.representation, d_logits, grads);
          d_reps[v.index_i] += v.lambda * d_virtual;
          d_reps[v.index_j] += (1.0 - v.lambda) * d_virtual;
        }
        out.total += config_.mixup_weight * out.mixup_loss;
      }
    }

    for (std::size_t i = 0; i < batch.size(); ++i) {
      backend_.backward_mask(traces[i], batch[i], d_reps[i], grads);
    }
    return out;
  }

  const Backend& backend_;
  const RunConfig& config_;
  MethodTraits traits_;
  const VerbalizerIds* ids_;
  std::vector<LanguageCode> languages_;
};

} // namespace detail

/// Languages whose verbalizers enter the training loss for `config`.
inline std::vector<LanguageCode> training_languages(const RunConfig& config, const MultilingualVerbalizer& mv) {
  if (!traits_of(config.method).multilingual_verbalizer) {
    return {source_language};
  }
  std::vector<LanguageCode> langs = config.languages.empty() ? mv.languages() : config.languages;
  if (std::find(langs.begin(), langs.end(), source_language) == langs.end()) {
    throw configuration_error("the verbalizer language set must contain " + source_language);
  }
  for (const auto& l : langs) {
    if (!mv.contains(l)) {
      throw configuration_error("no verbalizer for training language " + l);
    }
  }
  return langs;
}

/// Encode training inputs for `config.method` (prompts, or classification pairs for FT).
template <TrainableMaskedLanguageModel Backend>
std::vector<EncodedExample> encode_training_set(const Backend& backend, const std::vector<LabeledPair>& pairs,
                                                const RunConfig& config, const TaskLexicon& lexicon) {
  const auto traits = traits_of(config.method);
  const PromptTemplate tmpl = lexicon.make_template(traits.variant);
  std::vector<EncodedExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.language != source_language) {
      throw input_error("protocol violation: a " + p.language + " example reached training; only " +
                        source_language + " data may be used");
    }
    validate(p, lexicon.verbalizers.num_classes());
    out.push_back(traits.finetune ? backend.encode_pair(p)
                                  : backend.encode(build_prompt(p, tmpl, source_language, config.max_length)));
  }
  return out;
}

/// Train on the source-language shots and keep the epoch with the best dev accuracy
/// (earliest on ties). Optimizer steps fire every `grad_accumulation` micro-batches
/// with gradients averaged over the micro-batches accumulated.
template <TrainableMaskedLanguageModel Backend>
TrainResult<Backend> train_run(const RunConfig& config, const ShotSet& shots, Backend backend,
                               const TaskLexicon& lexicon,
                               const std::function<void(const StepRecord&)>& on_step = {}) {
  config.validate();
  const auto traits = traits_of(config.method);
  std::optional<VerbalizerIds> ids;
  std::vector<LanguageCode> languages;
  if (!traits.finetune) {
    ids.emplace(lexicon.verbalizers, backend.tokenizer()); // validation happens before any step
    languages = training_languages(config, lexicon.verbalizers);
  }
  for (const auto& p : shots.dev) {
    if (p.language != source_language) {
      throw input_error("protocol violation: development shots must be " + source_language);
    }
  }
  const auto train_set = encode_training_set(backend, shots.train, config, lexicon);
  if (train_set.empty()) {
    throw input_error("no training examples");
  }

  auto dev_accuracy = [&](const Backend& b) {
    return Predictor<Backend>(b, lexicon, config.method, config.strategy, config.max_length).accuracy(shots.dev);
  };

  TrainResult<Backend> result{backend, {}, 0, 0.0, {}};
  result.dev_curve.push_back(dev_accuracy(backend));
  result.best_dev_accuracy = result.dev_curve.front();

  Rng rng = Rng(config.seed).fork(0x7472'6169'6eULL);
  Adam optimizer(config.learning_rate);
  ParameterSet grads = backend.parameters().zeros_like();
  const detail::MicroBatchObjective<Backend> objective(backend, config, ids ? &*ids : nullptr, languages);

  std::vector<std::size_t> order(train_set.size());
  std::size_t micro_step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::size_t pending = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<EncodedExample> batch;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(train_set[order[i]]);
      }
      StepRecord record{epoch, micro_step++, objective.accumulate(batch, rng, grads)};
      if (on_step) {
        on_step(record);
      }
      result.steps.push_back(std::move(record));
      ++pending;
      if (pending == config.grad_accumulation || end == order.size()) {
        grads *= 1.0 / static_cast<double>(pending);
        optimizer.step(backend.parameters(), grads);
        grads.set_zero();
        pending = 0;
      }
    }
    const double acc = dev_accuracy(backend);
    result.dev_curve.push_back(acc);
    if (epoch == 1 || acc > result.best_dev_accuracy) {
      result.best_dev_accuracy = acc;
      result.best_epoch = epoch;
      result.checkpoint = backend;
    }
  }
  result.checkpoint.record_lineage("train:" + std::to_string(config.seed));
  return result;
}

} // namespace xlprompt
