#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlprompt/model/backend.hpp"
#include "xlprompt/model/pretrain.hpp"
#include "xlprompt/protocol/evaluate.hpp"
#include "xlprompt/synth/generator.hpp"

namespace xlprompt::synth {

/// Everything needed to stand up a synthetic multilingual experiment.
struct DeskConfig {
  SynthTaskSpec task;
  std::size_t pseudo_languages = 4;
  double rho = 0.0;
  bool parallel = true;
  std::size_t pretrain_sequences = 2000; ///< base lines in the pretraining corpus
  double statement_fraction = 0.0;       ///< share of corpus lines that state the relation
  PretrainConfig pretrain;
  BackendConfig backend;
};

inline void to_json(nlohmann::json& j, const DeskConfig& c) {
  j = nlohmann::json{{"task", c.task},
                     {"pseudo_languages", c.pseudo_languages},
                     {"rho", c.rho},
                     {"parallel", c.parallel},
                     {"pretrain_sequences", c.pretrain_sequences},
                     {"statement_fraction", c.statement_fraction},
                     {"pretrain", c.pretrain},
                     {"backend", c.backend}};
}

inline void from_json(const nlohmann::json& j, DeskConfig& c) {
  const DeskConfig d;
  c.task = j.contains("task") ? j.at("task").get<SynthTaskSpec>() : d.task;
  c.pseudo_languages = j.value("pseudo_languages", d.pseudo_languages);
  c.rho = j.value("rho", d.rho);
  c.parallel = j.value("parallel", d.parallel);
  c.pretrain_sequences = j.value("pretrain_sequences", d.pretrain_sequences);
  c.statement_fraction = j.value("statement_fraction", d.statement_fraction);
  c.pretrain = j.contains("pretrain") ? j.at("pretrain").get<PretrainConfig>() : d.pretrain;
  c.backend = j.contains("backend") ? j.at("backend").get<BackendConfig>() : d.backend;
}

/// Generated data, lexicon and vocabulary (no trained parameters).
struct DeskData {
  DeskConfig config;
  std::vector<PseudoLanguage> languages; ///< source language first
  SynthDataset source;                   ///< source-language pools
  LanguageTestSets test_sets;            ///< one test set per language, source first
  TaskLexicon lexicon;
  Vocabulary vocabulary;
  PretrainCorpus corpus;

  std::vector<LanguageCode> language_codes() const {
    std::vector<LanguageCode> out;
    for (const auto& l : languages) {
      out.push_back(l.code);
    }
    return out;
  }
};

inline DeskData make_desk_data(const DeskConfig& config) {
  DeskData out;
  out.config = config;
  out.source = generate_task(config.task);
  out.languages = make_language_set(config.task.vocabulary_size, config.pseudo_languages, config.rho,
                                    Rng(config.task.seed).fork(1).next_u64());
  for (const auto& lang : out.languages) {
    out.test_sets.emplace_back(lang.code, derive_language(out.source.test, lang));
  }
  out.lexicon = synth_verbalizers(out.language_codes(), config.task.num_classes);
  out.vocabulary = toy_vocabulary(config.task, out.lexicon, out.languages);
  out.corpus = generate_pretrain_corpus(config.task, out.languages, config.parallel, config.pretrain_sequences,
                                        Rng(config.task.seed).fork(2).next_u64(), &out.lexicon.verbalizers,
                                        config.statement_fraction);
  return out;
}

/// Fresh toy backend sized to the data, then pretrained on its corpus.
inline ToyBackend make_pretrained_backend(const DeskData& data, PretrainReport* report = nullptr) {
  BackendConfig bc = data.config.backend;
  bc.vocabulary_size = data.vocabulary.size();
  bc.num_classes = data.config.task.num_classes;
  ToyBackend backend(bc, Tokenizer(data.vocabulary));
  auto r = pretrain_toy(backend, data.corpus, data.config.pretrain);
  if (report != nullptr) {
    *report = std::move(r);
  }
  return backend;
}

} // namespace xlprompt::synth
