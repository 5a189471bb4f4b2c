#pragma once

#include <bit>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlprompt/core/error.hpp"
#include "xlprompt/core/linalg.hpp"
#include "xlprompt/model/toy_transformer.hpp"
#include "xlprompt/model/vocabulary.hpp"
#include "xlprompt/prompt/template.hpp"
#include "xlprompt/prompt/types.hpp"
#include "xlprompt/prompt/verbalizer.hpp"

namespace xlprompt {

/// A prompt (or classification input) mapped to backend token ids.
struct EncodedExample {
  std::vector<TokenId> ids;
  std::size_t mask_position = 0;
  std::size_t label = 0;
  LanguageCode language = source_language;
};

/// The contract a masked LM backend exposes to the objectives and evaluation code.
template <class B>
concept MaskedLanguageModel = requires(const B& b, std::span<const EncodedExample> batch, const Vector& repr,
                                       const PromptedExample& prompt, const LabeledPair& pair) {
  { b.hidden_dim() } -> std::convertible_to<std::size_t>;
  { b.vocabulary_size() } -> std::convertible_to<std::size_t>;
  { b.tokenizer() } -> std::convertible_to<const Tokenizer&>;
  { b.encode(prompt) } -> std::same_as<EncodedExample>;
  { b.encode_pair(pair) } -> std::same_as<EncodedExample>;
  { b.encode_mask(batch) } -> std::same_as<std::vector<Vector>>;
  { b.mlm_logits(repr) } -> std::same_as<Vector>;
  { b.classify_logits(batch) } -> std::same_as<Matrix>;
};

/// Backends the training loop can optimize: expose traces, backward passes and parameters.
template <class B>
concept TrainableMaskedLanguageModel =
    MaskedLanguageModel<B> && std::copyable<B> &&
    requires(B& b, const B& cb, const EncodedExample& ex, const Vector& v, ParameterSet& g) {
      typename B::Trace;
      { cb.trace(ex) } -> std::same_as<typename B::Trace>;
      { cb.mask_representation(std::declval<const typename B::Trace&>(), ex) } -> std::same_as<Vector>;
      { b.parameters() } -> std::same_as<ParameterSet&>;
      cb.backward_mask(std::declval<const typename B::Trace&>(), ex, v, g);
      { cb.mlm_backward(v, v, g) } -> std::same_as<Vector>;
      { cb.pooled_representation(std::declval<const typename B::Trace&>()) } -> std::same_as<Vector>;
      cb.backward_pooled(std::declval<const typename B::Trace&>(), v, g);
      { cb.class_logits(v) } -> std::same_as<Vector>;
      { cb.class_backward(v, v, g) } -> std::same_as<Vector>;
    };

/// The bundled reference backend: a ToyTransformer plus its tokenizer.
class ToyBackend {
public:
  using Trace = ToyTransformer::Trace;

  ToyBackend(BackendConfig config, Tokenizer tokenizer)
      : tokenizer_(std::move(tokenizer)), model_(with_vocab(std::move(config), tokenizer_.vocabulary())) {
    lineage_.push_back("init:" + std::to_string(model_.config().seed));
  }

  ToyBackend(BackendConfig config, Vocabulary vocabulary, TokenizerKind kind = TokenizerKind::whole_word)
      : ToyBackend(std::move(config), Tokenizer(std::move(vocabulary), kind)) {}

  const BackendConfig& config() const noexcept { return model_.config(); }
  std::size_t hidden_dim() const noexcept { return model_.config().hidden_dim; }
  std::size_t vocabulary_size() const noexcept { return model_.config().vocabulary_size; }
  const Tokenizer& tokenizer() const noexcept { return tokenizer_; }
  const Vocabulary& vocabulary() const noexcept { return tokenizer_.vocabulary(); }
  ToyTransformer& model() noexcept { return model_; }
  const ToyTransformer& model() const noexcept { return model_; }
  ParameterSet& parameters() noexcept { return model_.parameters(); }
  const ParameterSet& parameters() const noexcept { return model_.parameters(); }

  /// Seed history of these parameters, e.g. {"init:0", "pretrain:7", "train:3"}.
  const std::vector<std::string>& seed_lineage() const noexcept { return lineage_; }
  void record_lineage(std::string entry) { lineage_.push_back(std::move(entry)); }
  void set_seed_lineage(std::vector<std::string> lineage) { lineage_ = std::move(lineage); }

  EncodedExample encode(const PromptedExample& prompt) const {
    EncodedExample out;
    out.label = prompt.label;
    out.language = prompt.language;
    bool found_mask = false;
    for (std::size_t i = 0; i < prompt.tokens.size(); ++i) {
      if (i == prompt.mask_position) {
        if (prompt.tokens[i] != mask_token) {
          throw input_error("mask_position does not point at the mask token");
        }
        out.mask_position = out.ids.size();
        out.ids.push_back(vocabulary().mask_id());
        found_mask = true;
        continue;
      }
      for (TokenId id : tokenizer_.tokenize_word(prompt.tokens[i])) {
        out.ids.push_back(id);
      }
    }
    if (!found_mask) {
      throw input_error("prompt has no mask slot");
    }
    return out;
  }

  /// Classification input  <cls> A <sep> B <sep>, truncated longest-first.
  EncodedExample encode_pair(const LabeledPair& pair) const {
    TokenSequence a = pair.sentence_a;
    TokenSequence b = pair.sentence_b;
    if (a.size() + b.size() + 3 > config().max_sequence_length) {
      detail::truncate_pair(a, b, config().max_sequence_length - 3);
    }
    EncodedExample out;
    out.label = pair.label;
    out.language = pair.language;
    out.ids.push_back(vocabulary().cls_id());
    for (const auto& t : a) {
      for (TokenId id : tokenizer_.tokenize_word(t)) {
        out.ids.push_back(id);
      }
    }
    out.ids.push_back(vocabulary().sep_id());
    for (const auto& t : b) {
      for (TokenId id : tokenizer_.tokenize_word(t)) {
        out.ids.push_back(id);
      }
    }
    out.ids.push_back(vocabulary().sep_id());
    return out;
  }

  Trace trace(const EncodedExample& ex) const { return model_.forward(ex.ids); }

  Vector mask_representation(const Trace& t, const EncodedExample& ex) const {
    if (ex.mask_position >= ex.ids.size()) {
      throw input_error("mask position outside the sequence");
    }
    return t.hidden.row(static_cast<Eigen::Index>(ex.mask_position)).transpose();
  }

  Vector pooled_representation(const Trace& t) const { return t.hidden.row(0).transpose(); }

  std::vector<Vector> encode_mask(std::span<const EncodedExample> batch) const {
    std::vector<Vector> out;
    out.reserve(batch.size());
    for (const auto& ex : batch) {
      out.push_back(mask_representation(trace(ex), ex));
    }
    return out;
  }

  Vector mlm_logits(const Vector& repr) const { return model_.mlm_logits(repr); }

  Matrix classify_logits(std::span<const EncodedExample> batch) const {
    Matrix out(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(config().num_classes));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = model_.class_logits(pooled_representation(trace(batch[i]))).transpose();
    }
    return out;
  }

  /// Gradient of a loss that depends on the sequence only through the mask representation.
  void backward_mask(const Trace& t, const EncodedExample& ex, const Vector& d_repr, ParameterSet& grads) const {
    Matrix d_hidden = Matrix::Zero(t.hidden.rows(), t.hidden.cols());
    d_hidden.row(static_cast<Eigen::Index>(ex.mask_position)) = d_repr.transpose();
    model_.backward(t, d_hidden, grads);
  }

  void backward_pooled(const Trace& t, const Vector& d_pooled, ParameterSet& grads) const {
    Matrix d_hidden = Matrix::Zero(t.hidden.rows(), t.hidden.cols());
    d_hidden.row(0) = d_pooled.transpose();
    model_.backward(t, d_hidden, grads);
  }

  Vector mlm_backward(const Vector& repr, const Vector& d_logits, ParameterSet& grads) const {
    return model_.mlm_backward(repr, d_logits, grads);
  }

  Vector class_logits(const Vector& pooled) const { return model_.class_logits(pooled); }

  Vector class_backward(const Vector& pooled, const Vector& d_logits, ParameterSet& grads) const {
    return model_.class_backward(pooled, d_logits, grads);
  }

private:
  static BackendConfig with_vocab(BackendConfig config, const Vocabulary& vocab) {
    if (config.vocabulary_size == 0) {
      config.vocabulary_size = vocab.size();
    }
    if (config.vocabulary_size != vocab.size()) {
      throw configuration_error("backend vocabulary_size " + std::to_string(config.vocabulary_size) +
                                " does not match tokenizer vocabulary of " + std::to_string(vocab.size()));
    }
    for (const auto& special : special_tokens) {
      if (!vocab.contains(special)) {
        throw configuration_error("vocabulary lacks special token " + special);
      }
    }
    return config;
  }

  Tokenizer tokenizer_;
  ToyTransformer model_;
  std::vector<std::string> lineage_;
};

static_assert(TrainableMaskedLanguageModel<ToyBackend>);

// ---------------------------------------------------------------------------
// Checkpoints: "XLPCKPT1", u64 header length, JSON header, then every tensor
// as raw little-endian IEEE-754 doubles in header order.

namespace detail {
inline constexpr char checkpoint_magic[8] = {'X', 'L', 'P', 'C', 'K', 'P', 'T', '1'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
} // namespace detail

inline void save_checkpoint(const ToyBackend& backend, const std::filesystem::path& path) {
  nlohmann::ordered_json header;
  header["format"] = "xlprompt-checkpoint";
  header["version"] = 1;
  header["config"] = nlohmann::json(backend.config());
  header["tokenizer"] = std::string(to_string(backend.tokenizer().kind()));
  header["vocabulary"] = backend.vocabulary().tokens();
  header["seed_lineage"] = backend.seed_lineage();
  auto& tensors = header["tensors"] = nlohmann::ordered_json::array();
  const auto& params = backend.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({{"name", params.names()[i]}, {"rows", params[i].rows()}, {"cols", params[i].cols()}});
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw environment_error("cannot write checkpoint " + path.string());
  }
  out.write(detail::checkpoint_magic, sizeof(detail::checkpoint_magic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.write(reinterpret_cast<const char*>(params[i].data()),
              static_cast<std::streamsize>(params[i].size() * sizeof(double)));
  }
  if (!out) {
    throw environment_error("failed writing checkpoint " + path.string());
  }
}

inline ToyBackend load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw environment_error("cannot open checkpoint " + path.string());
  }
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::checkpoint_magic, sizeof(magic)) != 0) {
    throw input_error(path.string() + " is not an xlprompt checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 32)) {
    throw input_error("corrupt checkpoint header in " + path.string());
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw input_error("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  const auto config = header.at("config").get<BackendConfig>();
  Vocabulary vocab(header.at("vocabulary").get<std::vector<std::string>>());
  ToyBackend backend(config, Tokenizer(std::move(vocab), parse_tokenizer_kind(header.at("tokenizer").get<std::string>())));
  auto lineage = header.at("seed_lineage").get<std::vector<std::string>>();
  auto& params = backend.parameters();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.size()) {
    throw input_error("checkpoint tensor count does not match its config");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& meta = tensors[i];
    if (meta.at("name").get<std::string>() != params.names()[i] || meta.at("rows").get<Eigen::Index>() != params[i].rows() ||
        meta.at("cols").get<Eigen::Index>() != params[i].cols()) {
      throw input_error("checkpoint tensor '" + meta.at("name").get<std::string>() + "' does not match its config");
    }
    in.read(reinterpret_cast<char*>(params[i].data()), static_cast<std::streamsize>(params[i].size() * sizeof(double)));
  }
  if (!in) {
    throw input_error("truncated checkpoint " + path.string());
  }
  backend.set_seed_lineage(std::move(lineage));
  return backend;
}

} // namespace xlprompt
