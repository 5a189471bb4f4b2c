#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlprompt/core/error.hpp"
#include "xlprompt/core/linalg.hpp"
#include "xlprompt/core/rng.hpp"
#include "xlprompt/model/adam.hpp"
#include "xlprompt/model/backend.hpp"

namespace xlprompt {

/// One unlabeled line. Lines sharing a `group` are translations of one base sequence.
struct CorpusLine {
  TokenSequence tokens;
  LanguageCode language;
  std::size_t group = 0;
};

struct PretrainCorpus {
  std::vector<CorpusLine> lines;
};

struct PretrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double mask_probability = 0.15;
  /// Chance that a drawn line is joined with a translation of itself (when one exists).
  double parallel_pair_probability = 0.5;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"mask_probability", c.mask_probability},
                     {"parallel_pair_probability", c.parallel_pair_probability},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, PretrainConfig& c) {
  const PretrainConfig d;
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.mask_probability = j.value("mask_probability", d.mask_probability);
  c.parallel_pair_probability = j.value("parallel_pair_probability", d.parallel_pair_probability);
  c.seed = j.value("seed", d.seed);
}

struct PretrainReport {
  std::vector<double> step_losses;
};

namespace detail {

struct MaskedSequence {
  EncodedExample encoded;
  std::vector<std::pair<std::size_t, TokenId>> targets; // position, original id
};

inline std::vector<TokenId> encode_words(const ToyBackend& backend, const TokenSequence& words) {
  std::vector<TokenId> ids;
  for (const auto& w : words) {
    for (TokenId id : backend.tokenizer().tokenize_word(w)) {
      ids.push_back(id);
    }
  }
  return ids;
}

inline MaskedSequence mask_sequence(std::vector<TokenId> ids, const ToyBackend& backend, double mask_probability,
                                    Rng& rng) {
  const auto& vocab = backend.vocabulary();
  const TokenId sep = vocab.sep_id();
  if (ids.size() > backend.config().max_sequence_length) {
    ids.resize(backend.config().max_sequence_length);
  }
  MaskedSequence out;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != sep) {
      candidates.push_back(i);
    }
  }
  for (std::size_t i : candidates) {
    if (rng.uniform() < mask_probability) {
      out.targets.emplace_back(i, ids[i]);
    }
  }
  if (out.targets.empty() && !candidates.empty()) {
    const std::size_t i = candidates[rng.index(candidates.size())];
    out.targets.emplace_back(i, ids[i]);
  }
  for (const auto& [pos, original] : out.targets) {
    ids[pos] = vocab.mask_id();
  }
  out.encoded.ids = std::move(ids);
  return out;
}

class CorpusSampler {
public:
  CorpusSampler(const PretrainCorpus& corpus, const ToyBackend& backend) : corpus_(corpus), backend_(backend) {
    if (corpus.lines.empty()) {
      throw input_error("pretraining corpus is empty");
    }
    for (std::size_t i = 0; i < corpus.lines.size(); ++i) {
      groups_[corpus.lines[i].group].push_back(i);
    }
  }

  std::vector<TokenId> draw(Rng& rng, double pair_probability) const {
    const std::size_t i = rng.index(corpus_.lines.size());
    const auto& line = corpus_.lines[i];
    std::vector<TokenId> ids = encode_words(backend_, line.tokens);
    if (rng.uniform() < pair_probability) {
      const auto& members = groups_.at(line.group);
      std::vector<std::size_t> partners;
      for (std::size_t j : members) {
        if (corpus_.lines[j].language != line.language) {
          partners.push_back(j);
        }
      }
      if (!partners.empty()) {
        const auto& other = corpus_.lines[partners[rng.index(partners.size())]];
        ids.push_back(backend_.vocabulary().sep_id());
        const auto more = encode_words(backend_, other.tokens);
        ids.insert(ids.end(), more.begin(), more.end());
      }
    }
    return ids;
  }

private:
  const PretrainCorpus& corpus_;
  const ToyBackend& backend_;
  std::map<std::size_t, std::vector<std::size_t>> groups_;
};

} // namespace detail

/// Masked-token pretraining. Some sequences are a line joined with one of its
/// translations, which gives the encoder a cross-language alignment signal.
inline PretrainReport pretrain_toy(ToyBackend& backend, const PretrainCorpus& corpus, const PretrainConfig& config) {
  detail::CorpusSampler sampler(corpus, backend);
  PretrainReport report;
  if (config.steps == 0) {
    return report;
  }
  Rng rng(config.seed);
  Adam optimizer(config.learning_rate);
  ParameterSet grads = backend.parameters().zeros_like();
  for (std::size_t step = 0; step < config.steps; ++step) {
    grads.set_zero();
    double loss = 0.0;
    std::size_t count = 0;
    std::vector<detail::MaskedSequence> batch;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      batch.push_back(detail::mask_sequence(sampler.draw(rng, config.parallel_pair_probability), backend,
                                            config.mask_probability, rng));
      count += batch.back().targets.size();
    }
    const double scale = 1.0 / static_cast<double>(std::max<std::size_t>(count, 1));
    for (const auto& seq : batch) {
      const auto trace = backend.trace(seq.encoded);
      Matrix d_hidden = Matrix::Zero(trace.hidden.rows(), trace.hidden.cols());
      for (const auto& [pos, target] : seq.targets) {
        const Vector h = trace.hidden.row(static_cast<Eigen::Index>(pos)).transpose();
        const Vector logits = backend.mlm_logits(h);
        Vector probs = softmax(logits);
        loss -= std::log(probs[target]) * scale;
        probs[target] -= 1.0;
        probs *= scale;
        d_hidden.row(static_cast<Eigen::Index>(pos)) += backend.mlm_backward(h, probs, grads).transpose();
      }
      backend.model().backward(trace, d_hidden, grads);
    }
    optimizer.step(backend.parameters(), grads);
    report.step_losses.push_back(loss);
  }
  backend.record_lineage("pretrain:" + std::to_string(config.seed));
  return report;
}

struct MaskedLmEvaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t predictions = 0;
};

/// Masked-token loss and accuracy on `corpus` under a fixed masking seed (single lines, no pairing).
inline MaskedLmEvaluation evaluate_masked_lm(const ToyBackend& backend, const PretrainCorpus& corpus,
                                             double mask_probability = 0.15, std::uint64_t seed = 0) {
  if (corpus.lines.empty()) {
    throw input_error("evaluation corpus is empty");
  }
  Rng rng(seed);
  MaskedLmEvaluation out;
  std::size_t correct = 0;
  for (const auto& line : corpus.lines) {
    const auto seq = detail::mask_sequence(detail::encode_words(backend, line.tokens), backend, mask_probability, rng);
    const auto trace = backend.trace(seq.encoded);
    for (const auto& [pos, target] : seq.targets) {
      const Vector logits = backend.mlm_logits(trace.hidden.row(static_cast<Eigen::Index>(pos)).transpose());
      out.loss += log_sum_exp(logits) - logits[target];
      Eigen::Index best = 0;
      logits.maxCoeff(&best);
      correct += (best == target) ? 1 : 0;
      ++out.predictions;
    }
  }
  out.loss /= static_cast<double>(out.predictions);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(out.predictions);
  return out;
}

} // namespace xlprompt
