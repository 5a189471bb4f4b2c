#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xlprompt/core/error.hpp"
#include "xlprompt/core/linalg.hpp"
#include "xlprompt/core/rng.hpp"
#include "xlprompt/model/vocabulary.hpp"
#include "xlprompt/prompt/verbalizer.hpp"

namespace xlprompt {

/// A multilingual verbalizer with tokens resolved to backend ids.
class VerbalizerIds {
public:
  VerbalizerIds() = default;

  VerbalizerIds(const MultilingualVerbalizer& mv, const Tokenizer& tokenizer) : num_classes_(mv.num_classes()) {
    validate_against(mv, tokenizer);
    for (const auto& lang : mv.languages()) {
      std::vector<TokenId> ids;
      for (const auto& token : mv.at(lang).tokens) {
        ids.push_back(tokenizer.tokenize_word(token).front());
      }
      add(lang, std::move(ids));
    }
  }

  /// Direct construction, mostly for tests: language -> id per label.
  VerbalizerIds(std::size_t num_classes, const std::vector<std::pair<LanguageCode, std::vector<TokenId>>>& entries)
      : num_classes_(num_classes) {
    for (const auto& [lang, ids] : entries) {
      if (ids.size() != num_classes) {
        throw input_error("verbalizer for " + lang + " has wrong label count");
      }
      add(lang, ids);
    }
  }

  std::size_t num_classes() const noexcept { return num_classes_; }
  const std::vector<LanguageCode>& languages() const noexcept { return order_; }
  bool contains(const LanguageCode& lang) const { return ids_.contains(lang); }

  const std::vector<TokenId>& at(const LanguageCode& lang) const {
    auto it = ids_.find(lang);
    if (it == ids_.end()) {
      throw configuration_error("no verbalizer for language " + lang);
    }
    return it->second;
  }

  TokenId token(const LanguageCode& lang, std::size_t label) const {
    const auto& ids = at(lang);
    if (label >= ids.size()) {
      throw input_error("label " + std::to_string(label) + " out of range");
    }
    return ids[label];
  }

private:
  void add(const LanguageCode& lang, std::vector<TokenId> ids) {
    order_.push_back(lang);
    ids_.emplace(lang, std::move(ids));
  }

  std::size_t num_classes_ = 0;
  std::vector<LanguageCode> order_;
  std::map<LanguageCode, std::vector<TokenId>> ids_;
};

namespace detail {

inline void check_languages(std::span<const LanguageCode> languages, const VerbalizerIds& mv) {
  if (languages.empty()) {
    throw input_error("the verbalizer language set is empty");
  }
  for (const auto& l : languages) {
    (void)mv.at(l);
  }
}

} // namespace detail

/// Mean over languages of the negative log-probability of the label's token:
///
///   -(1/|L|) sum_l log softmax(logits)[V_l(label)]
///
/// With languages = {EN} this is the universal-prompting loss. When
/// `d_logits` is non-null it receives dLoss/dlogits.
inline double multilingual_verbalizer_loss(const Vector& logits, std::size_t label, const VerbalizerIds& mv,
                                           std::span<const LanguageCode> languages, Vector* d_logits = nullptr) {
  detail::check_languages(languages, mv);
  if (label >= mv.num_classes()) {
    throw input_error("label " + std::to_string(label) + " out of range");
  }
  const double lse = log_sum_exp(logits);
  const double weight = 1.0 / static_cast<double>(languages.size());
  double loss = 0.0;
  if (d_logits != nullptr) {
    *d_logits = (logits.array() - lse).exp().matrix();
  }
  for (const auto& lang : languages) {
    const TokenId t = mv.token(lang, label);
    loss -= weight * (logits[t] - lse);
    if (d_logits != nullptr) {
      (*d_logits)[t] -= weight;
    }
  }
  return loss;
}

/// Draw the mixing coefficient from Beta(alpha, alpha).
inline double sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) {
    throw input_error("mixup alpha must be positive");
  }
  return rng.beta(alpha, alpha);
}

/// lambda * m_i + (1 - lambda) * m_j.
inline Vector mixup_representations(const Vector& m_i, const Vector& m_j, double lambda) {
  if (m_i.size() != m_j.size()) {
    throw input_error("mixup representations differ in dimension");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw input_error("mixup lambda must lie in [0, 1]");
  }
  return lambda * m_i + (1.0 - lambda) * m_j;
}

struct MixupVirtualExample {
  Vector representation;
  std::size_t label_i = 0;
  std::size_t label_j = 0;
  double lambda = 1.0;
  std::size_t index_i = 0; ///< batch positions of the two sources
  std::size_t index_j = 0;
};

/// Loss of one virtual example given the head's logits on its representation:
///
///   -(1/|L|) sum_l [ lambda log p(V_l(y_i)) + (1 - lambda) log p(V_l(y_j)) ]
inline double mixup_loss(const Vector& logits, double lambda, std::size_t label_i, std::size_t label_j,
                         const VerbalizerIds& mv, std::span<const LanguageCode> languages,
                         Vector* d_logits = nullptr) {
  detail::check_languages(languages, mv);
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw input_error("mixup lambda must lie in [0, 1]");
  }
  if (label_i >= mv.num_classes() || label_j >= mv.num_classes()) {
    throw input_error("mixup label out of range");
  }
  const double lse = log_sum_exp(logits);
  const double weight = 1.0 / static_cast<double>(languages.size());
  double loss = 0.0;
  if (d_logits != nullptr) {
    *d_logits = (logits.array() - lse).exp().matrix();
  }
  for (const auto& lang : languages) {
    const TokenId ti = mv.token(lang, label_i);
    const TokenId tj = mv.token(lang, label_j);
    loss -= weight * (lambda * (logits[ti] - lse) + (1.0 - lambda) * (logits[tj] - lse));
    if (d_logits != nullptr) {
      (*d_logits)[ti] -= weight * lambda;
      (*d_logits)[tj] -= weight * (1.0 - lambda);
    }
  }
  return loss;
}

/// Same loss, applying `mlm_head` to the virtual representation first.
inline double mixup_loss(const MixupVirtualExample& virtual_example, const VerbalizerIds& mv,
                         std::span<const LanguageCode> languages,
                         const std::function<Vector(const Vector&)>& mlm_head) {
  return mixup_loss(mlm_head(virtual_example.representation), virtual_example.lambda, virtual_example.label_i,
                    virtual_example.label_j, mv, languages);
}

enum class PairingMode {
  disjoint,    ///< (0,1), (2,3), ...
  overlapping, ///< (0,1), (1,2), ...
};

inline std::string_view to_string(PairingMode m) { return m == PairingMode::disjoint ? "disjoint" : "overlapping"; }

inline PairingMode parse_pairing_mode(std::string_view name) {
  if (name == "disjoint") {
    return PairingMode::disjoint;
  }
  if (name == "overlapping") {
    return PairingMode::overlapping;
  }
  throw configuration_error("unknown pairing mode '" + std::string(name) + "'");
}

/// Mix adjacent examples of a batch in its current order, one fresh lambda per pair.
inline std::vector<MixupVirtualExample> pair_batch(std::span<const Vector> representations,
                                                   std::span<const std::size_t> labels, double alpha, Rng& rng,
                                                   PairingMode mode = PairingMode::disjoint) {
  if (representations.size() != labels.size()) {
    throw input_error("pair_batch: representation and label counts differ");
  }
  std::vector<MixupVirtualExample> out;
  const std::size_t n = representations.size();
  const std::size_t stride = mode == PairingMode::disjoint ? 2 : 1;
  for (std::size_t i = 0; i + 1 < n; i += stride) {
    MixupVirtualExample v;
    v.index_i = i;
    v.index_j = i + 1;
    v.label_i = labels[i];
    v.label_j = labels[i + 1];
    v.lambda = sample_lambda(alpha, rng);
    v.representation = mixup_representations(representations[i], representations[i + 1], v.lambda);
    out.push_back(std::move(v));
  }
  return out;
}

/// Softmax cross-entropy over class logits.
inline double finetune_loss(const Vector& class_logits, std::size_t label, Vector* d_logits = nullptr) {
  if (label >= static_cast<std::size_t>(class_logits.size())) {
    throw input_error("label " + std::to_string(label) + " out of range for " +
                      std::to_string(class_logits.size()) + " classes");
  }
  const double lse = log_sum_exp(class_logits);
  if (d_logits != nullptr) {
    *d_logits = (class_logits.array() - lse).exp().matrix();
    (*d_logits)[static_cast<Eigen::Index>(label)] -= 1.0;
  }
  return lse - class_logits[static_cast<Eigen::Index>(label)];
}

/// Per-step loss record; total = real_loss + mixup_weight * mixup_loss.
struct LossBreakdown {
  double real_loss = 0.0;
  double mixup_loss = 0.0;
  double total = 0.0;
  std::vector<double> lambdas;
};

} // namespace xlprompt
