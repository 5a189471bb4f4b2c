#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "xlprompt/core/error.hpp"
#include "xlprompt/model/backend.hpp"
#include "xlprompt/prompt/verbalizer.hpp"

namespace xlprompt {

inline Vocabulary load_vocabulary_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw environment_error("cannot open vocabulary file " + path.string());
  }
  std::vector<Token> tokens;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (!line.empty()) {
      tokens.push_back(line);
    }
  }
  return Vocabulary(tokens);
}

inline void save_vocabulary_file(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw environment_error("cannot write vocabulary file " + path.string());
  }
  for (const auto& t : vocab.tokens()) {
    out << t << '\n';
  }
}

/// Open a backend from a descriptor.
///
/// `descriptor` is either a checkpoint file or a JSON descriptor:
///
///   { "kind": "checkpoint", "path": "model.ckpt", "tokenizer": "greedy_subword" }
///   { "kind": "toy", "vocabulary": "vocab.txt", "config": { ... }, "tokenizer": "whole_word" }
///
/// Relative paths resolve against the descriptor's directory. When `verbalizers`
/// is given, every verbalizer token is re-validated against the backend tokenizer.
inline ToyBackend attach_external_backend(const std::filesystem::path& descriptor,
                                          const MultilingualVerbalizer* verbalizers = nullptr) {
  if (!std::filesystem::exists(descriptor)) {
    throw environment_error("backend artifact " + descriptor.string() + " does not exist");
  }

  auto open = [&]() -> ToyBackend {
    std::ifstream probe(descriptor, std::ios::binary);
    char head[8] = {};
    probe.read(head, sizeof(head));
    if (probe.gcount() == 8 && std::memcmp(head, detail::checkpoint_magic, 8) == 0) {
      return load_checkpoint(descriptor);
    }
    const auto doc = read_json_file(descriptor);
    const auto base = descriptor.parent_path();
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() ? path : base / path;
    };
    try {
      const std::string kind = doc.at("kind").get<std::string>();
      if (kind == "checkpoint") {
        const auto path = resolve(doc.at("path").get<std::string>());
        if (!std::filesystem::exists(path)) {
          throw environment_error("checkpoint " + path.string() + " named by " + descriptor.string() +
                                  " does not exist");
        }
        ToyBackend backend = load_checkpoint(path);
        if (doc.contains("tokenizer")) {
          const auto tokenizer_kind = parse_tokenizer_kind(doc.at("tokenizer").get<std::string>());
          ToyBackend rebuilt(backend.config(), Tokenizer(backend.vocabulary(), tokenizer_kind));
          rebuilt.parameters() = backend.parameters();
          rebuilt.set_seed_lineage(backend.seed_lineage());
          return rebuilt;
        }
        return backend;
      }
      if (kind == "toy") {
        const auto vocab_path = resolve(doc.at("vocabulary").get<std::string>());
        Vocabulary vocab = load_vocabulary_file(vocab_path);
        BackendConfig config = doc.value("config", nlohmann::json::object()).get<BackendConfig>();
        const auto tokenizer_kind = parse_tokenizer_kind(doc.value("tokenizer", std::string("whole_word")));
        return ToyBackend(config, Tokenizer(std::move(vocab), tokenizer_kind));
      }
      throw configuration_error("unknown backend kind '" + kind + "' in " + descriptor.string());
    } catch (const nlohmann::json::exception& e) {
      throw input_error("malformed backend descriptor " + descriptor.string() + ": " + e.what());
    }
  };

  ToyBackend backend = open();
  if (verbalizers != nullptr) {
    validate_against(*verbalizers, backend.tokenizer());
  }
  return backend;
}

} // namespace xlprompt
