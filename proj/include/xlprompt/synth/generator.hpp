#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlprompt/core/error.hpp"
#include "xlprompt/core/rng.hpp"
#include "xlprompt/model/pretrain.hpp"
#include "xlprompt/model/vocabulary.hpp"
#include "xlprompt/prompt/types.hpp"
#include "xlprompt/prompt/verbalizer.hpp"

namespace xlprompt::synth {

/// Parameters of the rule-based sentence-pair task.
///
/// Label 0: B is a (possibly gapped) subsequence of A.
/// Label 1: B shares no content token with A.
/// Label 2: anything else (some overlap, not a subsequence).
/// With two classes, labels 1 and 2 merge into label 1.
struct SynthTaskSpec {
  std::size_t num_classes = 3;
  std::size_t vocabulary_size = 300; ///< content tokens w0 .. w{n-1}
  std::size_t a_min_length = 5;
  std::size_t a_max_length = 8;
  std::size_t b_min_length = 2;
  std::size_t b_max_length = 4;
  double zipf_exponent = 1.0;
  double contiguous_probability = 0.5; ///< chance a label-0 B is a contiguous span of A rather than gapped
  std::size_t train_per_class = 256;
  std::size_t dev_per_class = 256;
  std::size_t test_per_class = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes != 2 && num_classes != 3) {
      throw configuration_error("synthetic task supports 2 or 3 classes");
    }
    if (a_min_length == 0 || a_min_length > a_max_length || b_min_length == 0 || b_min_length > b_max_length) {
      throw configuration_error("synthetic length ranges are empty");
    }
    if (b_min_length < 2 && num_classes == 3) {
      throw configuration_error("the mixed-overlap class needs sentence B of at least two tokens");
    }
    if (b_min_length > a_min_length) {
      throw configuration_error("sentence B cannot be a subsequence when it is longer than A");
    }
    if (!(contiguous_probability >= 0.0 && contiguous_probability <= 1.0)) {
      throw configuration_error("contiguous_probability must lie in [0, 1]");
    }
    if (vocabulary_size < a_max_length + b_max_length) {
      throw generation_error("content vocabulary of " + std::to_string(vocabulary_size) +
                             " tokens cannot keep B disjoint from A");
    }
  }
};

inline void to_json(nlohmann::json& j, const SynthTaskSpec& c) {
  j = nlohmann::json{{"num_classes", c.num_classes},
                     {"vocabulary_size", c.vocabulary_size},
                     {"a_min_length", c.a_min_length},
                     {"a_max_length", c.a_max_length},
                     {"b_min_length", c.b_min_length},
                     {"b_max_length", c.b_max_length},
                     {"zipf_exponent", c.zipf_exponent},
                     {"contiguous_probability", c.contiguous_probability},
                     {"train_per_class", c.train_per_class},
                     {"dev_per_class", c.dev_per_class},
                     {"test_per_class", c.test_per_class},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthTaskSpec& c) {
  const SynthTaskSpec d;
  c.num_classes = j.value("num_classes", d.num_classes);
  c.vocabulary_size = j.value("vocabulary_size", d.vocabulary_size);
  c.a_min_length = j.value("a_min_length", d.a_min_length);
  c.a_max_length = j.value("a_max_length", d.a_max_length);
  c.b_min_length = j.value("b_min_length", d.b_min_length);
  c.b_max_length = j.value("b_max_length", d.b_max_length);
  c.zipf_exponent = j.value("zipf_exponent", d.zipf_exponent);
  c.contiguous_probability = j.value("contiguous_probability", d.contiguous_probability);
  c.train_per_class = j.value("train_per_class", d.train_per_class);
  c.dev_per_class = j.value("dev_per_class", d.dev_per_class);
  c.test_per_class = j.value("test_per_class", d.test_per_class);
  c.seed = j.value("seed", d.seed);
}

struct SynthDataset {
  std::vector<LabeledPair> train;
  std::vector<LabeledPair> dev;
  std::vector<LabeledPair> test;
};

inline Token content_token(std::size_t index) { return "w" + std::to_string(index); }

/// Index of a content token "w<k>", if `token` is one.
inline std::optional<std::size_t> content_index(std::string_view token) {
  if (token.size() < 2 || token.front() != 'w') {
    return std::nullopt;
  }
  std::size_t value = 0;
  const auto* first = token.data() + 1;
  const auto* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || (token.size() > 2 && token[1] == '0')) {
    return std::nullopt;
  }
  return value;
}

inline bool is_subsequence(const TokenSequence& needle, const TokenSequence& haystack) {
  std::size_t j = 0;
  for (std::size_t i = 0; i < haystack.size() && j < needle.size(); ++i) {
    if (haystack[i] == needle[j]) {
      ++j;
    }
  }
  return j == needle.size();
}

/// The gold labelling rule.
inline std::size_t gold_label(const TokenSequence& a, const TokenSequence& b, std::size_t num_classes = 3) {
  if (is_subsequence(b, a)) {
    return 0;
  }
  const std::set<Token> in_a(a.begin(), a.end());
  const bool shares = std::any_of(b.begin(), b.end(), [&](const Token& t) { return in_a.contains(t); });
  if (!shares || num_classes == 2) {
    return 1;
  }
  return 2;
}

namespace detail {

class ZipfSampler {
public:
  ZipfSampler(std::size_t n, double exponent) : cdf_(n) {
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      total += 1.0 / std::pow(static_cast<double>(k + 1), exponent);
      cdf_[k] = total;
    }
    for (auto& c : cdf_) {
      c /= total;
    }
  }

  std::size_t draw(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

private:
  std::vector<double> cdf_;
};

inline std::size_t uniform_between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

inline TokenSequence draw_distinct(Rng& rng, const ZipfSampler& zipf, std::size_t count,
                                   const std::set<std::size_t>& excluded) {
  std::set<std::size_t> used;
  TokenSequence out;
  while (out.size() < count) {
    const std::size_t k = zipf.draw(rng);
    if (excluded.contains(k) || !used.insert(k).second) {
      continue;
    }
    out.push_back(content_token(k));
  }
  return out;
}

inline std::set<std::size_t> indices_of(const TokenSequence& tokens) {
  std::set<std::size_t> out;
  for (const auto& t : tokens) {
    out.insert(*content_index(t));
  }
  return out;
}

inline LabeledPair draw_pair(const SynthTaskSpec& spec, const ZipfSampler& zipf, std::size_t label, Rng& rng) {
  LabeledPair pair;
  pair.label = label;
  pair.language = source_language;
  pair.sentence_a = draw_distinct(rng, zipf, uniform_between(rng, spec.a_min_length, spec.a_max_length), {});
  const auto a_set = indices_of(pair.sentence_a);
  const std::size_t a_len = pair.sentence_a.size();

  // For two classes, label 1 covers both the disjoint and the mixed case.
  const bool disjoint = label == 1 && (spec.num_classes == 3 || rng.uniform() < 0.5);
  if (label == 0) {
    const std::size_t b_len = uniform_between(rng, spec.b_min_length, std::min(spec.b_max_length, a_len));
    if (rng.uniform() < spec.contiguous_probability) {
      const std::size_t start = rng.index(a_len - b_len + 1);
      pair.sentence_b.assign(pair.sentence_a.begin() + static_cast<std::ptrdiff_t>(start),
                             pair.sentence_a.begin() + static_cast<std::ptrdiff_t>(start + b_len));
    } else {
      std::vector<std::size_t> positions(a_len);
      for (std::size_t i = 0; i < a_len; ++i) {
        positions[i] = i;
      }
      rng.shuffle(positions);
      positions.resize(b_len);
      std::sort(positions.begin(), positions.end());
      for (std::size_t p : positions) {
        pair.sentence_b.push_back(pair.sentence_a[p]);
      }
    }
  } else if (disjoint) {
    const std::size_t b_len = uniform_between(rng, spec.b_min_length, spec.b_max_length);
    pair.sentence_b = draw_distinct(rng, zipf, b_len, a_set);
  } else {
    const std::size_t b_len = uniform_between(rng, std::max<std::size_t>(2, spec.b_min_length), spec.b_max_length);
    const std::size_t shared = uniform_between(rng, 1, std::min(b_len - 1, a_len));
    TokenSequence from_a = pair.sentence_a;
    rng.shuffle(from_a);
    from_a.resize(shared);
    TokenSequence fresh = draw_distinct(rng, zipf, b_len - shared, a_set);
    pair.sentence_b = from_a;
    pair.sentence_b.insert(pair.sentence_b.end(), fresh.begin(), fresh.end());
    rng.shuffle(pair.sentence_b);
  }
  return pair;
}

inline std::string pair_key(const LabeledPair& p) { return join_tokens(p.sentence_a) + " | " + join_tokens(p.sentence_b); }

} // namespace detail

/// `per_class` examples of every class, shuffled, none repeating a key in `seen`.
inline std::vector<LabeledPair> generate_balanced(const SynthTaskSpec& spec, std::size_t per_class, Rng& rng,
                                                  std::set<std::string>& seen) {
  spec.validate();
  const detail::ZipfSampler zipf(spec.vocabulary_size, spec.zipf_exponent);
  std::vector<LabeledPair> out;
  for (std::size_t label = 0; label < spec.num_classes; ++label) {
    std::size_t made = 0;
    std::size_t attempts = 0;
    while (made < per_class) {
      if (++attempts > 1000 * (per_class + 10)) {
        throw generation_error("could not draw enough distinct pairs for class " + std::to_string(label));
      }
      LabeledPair pair = detail::draw_pair(spec, zipf, label, rng);
      if (gold_label(pair.sentence_a, pair.sentence_b, spec.num_classes) != label) {
        continue;
      }
      if (!seen.insert(detail::pair_key(pair)).second) {
        continue;
      }
      out.push_back(std::move(pair));
      ++made;
    }
  }
  rng.shuffle(out);
  return out;
}

/// Source-language train/dev/test pools; pairwise disjoint, balanced, seed-deterministic.
inline SynthDataset generate_task(const SynthTaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::set<std::string> seen;
  SynthDataset out;
  out.train = generate_balanced(spec, spec.train_per_class, rng, seen);
  out.dev = generate_balanced(spec, spec.dev_per_class, rng, seen);
  out.test = generate_balanced(spec, spec.test_per_class, rng, seen);
  return out;
}

/// A pseudo-language: a bijection over content token indices. Fixed points
/// keep the source surface form (shared tokens); every other index k is
/// written as "w<permutation[k]>@<code>", a token of this language only.
struct PseudoLanguage {
  LanguageCode code;
  std::vector<std::size_t> permutation;
  double overlap = 1.0; ///< fraction of fixed points

  bool moves(std::size_t index) const { return permutation[index] != index; }

  /// Source content token to this language's surface form.
  Token map(const Token& token) const {
    const auto idx = content_index(token);
    if (!idx || *idx >= permutation.size()) {
      throw input_error("token '" + token + "' is outside the permutation domain of " + code);
    }
    return moves(*idx) ? content_token(permutation[*idx]) + "@" + code : token;
  }

  /// Surface form of this language back to the source token.
  Token unmap(const Token& token) const {
    const std::string suffix = "@" + code;
    if (token.size() > suffix.size() && token.ends_with(suffix)) {
      const auto idx = content_index(std::string_view(token).substr(0, token.size() - suffix.size()));
      if (idx && *idx < permutation.size()) {
        const auto it = std::find(permutation.begin(), permutation.end(), *idx);
        const auto source = static_cast<std::size_t>(it - permutation.begin());
        if (moves(source)) {
          return content_token(source);
        }
      }
    } else if (const auto idx = content_index(token); idx && *idx < permutation.size() && !moves(*idx)) {
      return token;
    }
    throw input_error("token '" + token + "' is not a content token of " + code);
  }

  /// Tokens that exist only in this language.
  std::vector<Token> own_tokens() const {
    std::vector<Token> out;
    for (std::size_t k = 0; k < permutation.size(); ++k) {
      if (moves(k)) {
        out.push_back(content_token(k) + "@" + code);
      }
    }
    return out;
  }
};

inline PseudoLanguage identity_language(LanguageCode code, std::size_t vocabulary_size) {
  PseudoLanguage out{std::move(code), std::vector<std::size_t>(vocabulary_size), 1.0};
  for (std::size_t i = 0; i < vocabulary_size; ++i) {
    out.permutation[i] = i;
  }
  return out;
}

/// Random bijection whose fixed points are a `rho` fraction of the vocabulary;
/// all other indices move (one cycle through them).
inline PseudoLanguage make_pseudo_language(LanguageCode code, std::size_t vocabulary_size, double rho,
                                           std::uint64_t seed) {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw configuration_error("overlap rho must lie in [0, 1]");
  }
  PseudoLanguage out = identity_language(std::move(code), vocabulary_size);
  Rng rng(seed);
  std::size_t fixed = static_cast<std::size_t>(std::llround(rho * static_cast<double>(vocabulary_size)));
  if (vocabulary_size - fixed == 1) {
    fixed = fixed == 0 ? 0 : fixed - 1;
  }
  std::vector<std::size_t> order(vocabulary_size);
  for (std::size_t i = 0; i < vocabulary_size; ++i) {
    order[i] = i;
  }
  rng.shuffle(order);
  std::vector<std::size_t> moving(order.begin() + static_cast<std::ptrdiff_t>(fixed), order.end());
  if (moving.size() >= 2) {
    for (std::size_t i = 0; i < moving.size(); ++i) {
      out.permutation[moving[i]] = moving[(i + 1) % moving.size()];
    }
  }
  std::size_t fixed_points = 0;
  for (std::size_t i = 0; i < vocabulary_size; ++i) {
    fixed_points += out.moves(i) ? 0 : 1;
  }
  out.overlap = vocabulary_size == 0 ? 1.0 : static_cast<double>(fixed_points) / static_cast<double>(vocabulary_size);
  return out;
}

inline TokenSequence map_tokens(const TokenSequence& tokens, const PseudoLanguage& lang) {
  TokenSequence out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    out.push_back(lang.map(t));
  }
  return out;
}

inline TokenSequence unmap_tokens(const TokenSequence& tokens, const PseudoLanguage& lang) {
  TokenSequence out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    out.push_back(lang.unmap(t));
  }
  return out;
}

/// Translate a dataset: content tokens through the permutation, labels unchanged.
inline std::vector<LabeledPair> derive_language(const std::vector<LabeledPair>& pairs, const PseudoLanguage& lang) {
  std::vector<LabeledPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({map_tokens(p.sentence_a, lang), map_tokens(p.sentence_b, lang), p.label, lang.code});
  }
  return out;
}

/// Undo derive_language: back to source tokens and the source language code.
inline std::vector<LabeledPair> restore_source(const std::vector<LabeledPair>& pairs, const PseudoLanguage& lang) {
  std::vector<LabeledPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.language != lang.code) {
      throw input_error("example in " + p.language + " cannot be restored through " + lang.code);
    }
    out.push_back({unmap_tokens(p.sentence_a, lang), unmap_tokens(p.sentence_b, lang), p.label, source_language});
  }
  return out;
}

/// The source language plus `count` pseudo-languages L1..L<count> at overlap `rho`.
inline std::vector<PseudoLanguage> make_language_set(std::size_t vocabulary_size, std::size_t count, double rho,
                                                     std::uint64_t seed) {
  std::vector<PseudoLanguage> out{identity_language(source_language, vocabulary_size)};
  Rng seeds(seed);
  for (std::size_t i = 1; i <= count; ++i) {
    out.push_back(make_pseudo_language("L" + std::to_string(i), vocabulary_size, rho, seeds.fork(i).next_u64()));
  }
  return out;
}

/// Unlabeled "A . B" lines. Parallel corpora repeat every base line once per
/// language under a shared group id; otherwise each base line goes to one
/// random language.
///
/// With `answers` set, a `statement_fraction` share of base lines become
/// "A . B ? v ." where v is the language's answer word for the pair's relation.
/// These stand in for the question/answer text a real pretraining corpus contains.
inline PretrainCorpus generate_pretrain_corpus(const SynthTaskSpec& spec, const std::vector<PseudoLanguage>& languages,
                                               bool parallel, std::size_t base_sequences, std::uint64_t seed,
                                               const MultilingualVerbalizer* answers = nullptr,
                                               double statement_fraction = 0.0) {
  spec.validate();
  if (languages.empty()) {
    throw configuration_error("pretraining corpus needs at least one language");
  }
  for (const auto& l : languages) {
    if (l.permutation.size() != spec.vocabulary_size) {
      throw configuration_error("language " + l.code + " was not derived from this task's vocabulary");
    }
  }
  if (!(statement_fraction >= 0.0 && statement_fraction <= 1.0)) {
    throw configuration_error("statement_fraction must lie in [0, 1]");
  }
  if (statement_fraction > 0.0) {
    if (answers == nullptr) {
      throw configuration_error("statement lines need answer words");
    }
    if (answers->num_classes() != spec.num_classes) {
      throw configuration_error("answer words cover " + std::to_string(answers->num_classes()) +
                                " classes, the task has " + std::to_string(spec.num_classes));
    }
    for (const auto& l : languages) {
      if (!answers->contains(l.code)) {
        throw configuration_error("no answer words for language " + l.code);
      }
    }
  }
  Rng rng(seed);
  const detail::ZipfSampler zipf(spec.vocabulary_size, spec.zipf_exponent);
  PretrainCorpus corpus;
  for (std::size_t g = 0; g < base_sequences; ++g) {
    const LabeledPair pair = detail::draw_pair(spec, zipf, rng.index(spec.num_classes), rng);
    const bool statement = statement_fraction > 0.0 && rng.uniform() < statement_fraction;
    TokenSequence base = pair.sentence_a;
    base.push_back(".");
    base.insert(base.end(), pair.sentence_b.begin(), pair.sentence_b.end());
    auto translate = [&](const PseudoLanguage& lang) {
      TokenSequence line;
      for (const auto& t : base) {
        line.push_back(t == "." ? t : lang.map(t));
      }
      if (statement) {
        line.push_back("?");
        line.push_back(answers->at(lang.code).tokens[pair.label]);
        line.push_back(".");
      }
      return line;
    };
    if (parallel) {
      for (const auto& lang : languages) {
        corpus.lines.push_back({translate(lang), lang.code, g});
      }
    } else {
      const auto& lang = languages[rng.index(languages.size())];
      corpus.lines.push_back({translate(lang), lang.code, g});
    }
  }
  return corpus;
}

inline std::vector<std::string> label_names_for(std::size_t num_classes) {
  if (num_classes == 3) {
    return {"entailment", "contradiction", "neutral"};
  }
  if (num_classes == 2) {
    return {"paraphrase", "non-paraphrase"};
  }
  throw configuration_error("synthetic verbalizers support 2 or 3 classes");
}

/// Verbalizers and prompting words over reserved (non-content) tokens.
///
/// The source language uses yes/no/maybe and Question/Answer; language L uses
/// yes@L, no@L, maybe@L, Question@L and Answer@L. `reserved_slots` = 0 means
/// "as many as needed".
inline TaskLexicon synth_verbalizers(const std::vector<LanguageCode>& languages, std::size_t num_classes,
                                     std::size_t reserved_slots = 0) {
  const auto labels = label_names_for(num_classes);
  const std::vector<Token> base_words = num_classes == 3 ? std::vector<Token>{"yes", "no", "maybe"}
                                                         : std::vector<Token>{"yes", "no"};
  if (reserved_slots != 0 && languages.size() * num_classes > reserved_slots) {
    throw generation_error("need " + std::to_string(languages.size() * num_classes) +
                           " reserved verbalizer slots, only " + std::to_string(reserved_slots) + " available");
  }
  TaskLexicon lex;
  lex.task = "synthetic";
  std::vector<Verbalizer> verbalizers;
  for (const auto& lang : languages) {
    const std::string suffix = lang == source_language ? "" : "@" + lang;
    Verbalizer v{lang, {}};
    for (const auto& w : base_words) {
      v.tokens.push_back(w + suffix);
    }
    verbalizers.push_back(std::move(v));
    lex.prompting_words[lang] = {"Question" + suffix, "Answer" + suffix};
  }
  lex.verbalizers = MultilingualVerbalizer(labels, std::move(verbalizers));
  return lex;
}

/// Toy-backend vocabulary: specials, punctuation, prompting words, verbalizer
/// tokens, source content tokens, then each pseudo-language's own tokens.
inline Vocabulary toy_vocabulary(const SynthTaskSpec& spec, const TaskLexicon& lexicon,
                                 const std::vector<PseudoLanguage>& languages = {}) {
  Vocabulary vocab(special_tokens);
  for (const char* p : {".", "?", ":"}) {
    vocab.add(p);
  }
  for (const auto& lang : lexicon.verbalizers.languages()) {
    if (auto it = lexicon.prompting_words.find(lang); it != lexicon.prompting_words.end()) {
      vocab.add(it->second.question);
      vocab.add(it->second.answer);
    }
  }
  for (const auto& lang : lexicon.verbalizers.languages()) {
    for (const auto& t : lexicon.verbalizers.at(lang).tokens) {
      vocab.add(t);
    }
  }
  for (std::size_t i = 0; i < spec.vocabulary_size; ++i) {
    vocab.add(content_token(i));
  }
  for (const auto& lang : languages) {
    for (const auto& t : lang.own_tokens()) {
      vocab.add(t);
    }
  }
  return vocab;
}

} // namespace xlprompt::synth
