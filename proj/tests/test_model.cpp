#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "test_support.hpp"
#include "xlprompt/model/attach.hpp"
#include "xlprompt/model/backend.hpp"
#include "xlprompt/model/pretrain.hpp"
#include "xlprompt/objectives/losses.hpp"
#include "xlprompt/prompt/template.hpp"
#include "xlprompt/synth/desk.hpp"

using namespace xlprompt;
using xlprompt::testing::small_backend;

namespace {

EncodedExample ids_of(const ToyBackend& b, const std::vector<std::string>& words, std::size_t mask_at,
                      std::size_t label = 0) {
  EncodedExample ex;
  for (std::size_t i = 0; i < words.size(); ++i) {
    ex.ids.push_back(i == mask_at ? b.vocabulary().mask_id() : b.vocabulary().id(words[i]));
  }
  ex.mask_position = mask_at;
  ex.label = label;
  return ex;
}

std::vector<EncodedExample> two_prompts(const ToyBackend& b) {
  return {ids_of(b, {"w1", "w2", "w3", ".", "w2", "?", "<mask>", "."}, 6, 0),
          ids_of(b, {"w4", "w5", ".", "w6", "w7", "?", "<mask>", "."}, 7 - 1, 1)};
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("xlprompt-model-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

} // namespace

TEST(EncodeMask, IdenticalPromptsGiveIdenticalRepresentations) {
  const auto b = small_backend(10);
  const auto ex = two_prompts(b).front();
  const std::vector<EncodedExample> batch{ex, ex};
  const auto reps = b.encode_mask(batch);
  ASSERT_EQ(reps.size(), 2u);
  EXPECT_EQ(reps[0], reps[1]);
}

TEST(EncodeMask, ShapeContract) {
  const auto b = small_backend(10);
  const auto batch = two_prompts(b);
  const auto reps = b.encode_mask(batch);
  ASSERT_EQ(reps.size(), batch.size());
  for (const auto& r : reps) {
    EXPECT_EQ(static_cast<std::size_t>(r.size()), b.hidden_dim());
    EXPECT_TRUE(r.allFinite());
  }
}

TEST(EncodeMask, MatchesFrozenGoldenValue) {
  // Seed-0 backend from small_backend(10): d=8, 2 layers, 2 heads, init std 0.3.
  const auto golden = read_json_file(xlprompt::testing::source_dir() / "tests/golden/encode_mask_seed0.json");
  const auto b = small_backend(10);
  const auto words = golden.at("prompt").get<std::vector<std::string>>();
  const auto ex = ids_of(b, words, golden.at("mask_position").get<std::size_t>());
  const auto expected = golden.at("representation").get<std::vector<double>>();
  const auto got = b.encode_mask(std::span<const EncodedExample>(&ex, 1)).front();
  ASSERT_EQ(static_cast<std::size_t>(got.size()), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_NEAR(got[static_cast<Eigen::Index>(i)], expected[i], 1e-12) << "component " << i;
  }
}

TEST(EncodeMask, BatchEqualsConcatenatedSingletons) {
  const auto b = small_backend(10, {}, 4);
  auto batch = two_prompts(b);
  batch.push_back(ids_of(b, {"w9", "?", "<mask>"}, 2));
  const auto together = b.encode_mask(batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto alone = b.encode_mask(std::span<const EncodedExample>(&batch[i], 1)).front();
    EXPECT_LE((together[i] - alone).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(EncodeMask, OutOfRangeTokenAndOverlongSequenceAreInputErrors) {
  const auto b = small_backend(10);
  EncodedExample bad = two_prompts(b).front();
  bad.ids[0] = static_cast<TokenId>(b.vocabulary_size());
  EXPECT_THROW(b.encode_mask(std::span<const EncodedExample>(&bad, 1)), input_error);
  EncodedExample longer;
  longer.ids.assign(b.config().max_sequence_length + 1, b.vocabulary().id("w1"));
  longer.mask_position = 0;
  EXPECT_THROW(b.encode_mask(std::span<const EncodedExample>(&longer, 1)), input_error);
}

TEST(EncodeMask, PromptWithoutMaskIsRejected) {
  const auto b = small_backend(10);
  PromptedExample p{{"w1", "w2"}, 0, 0, "EN"};
  EXPECT_THROW(b.encode(p), input_error);
}

TEST(MlmLogits, ZeroRepresentationWithZeroBiasGivesEqualLogits) {
  auto b = small_backend(10);
  const auto& names = b.parameters().names();
  const auto slot = static_cast<std::size_t>(std::find(names.begin(), names.end(), "mlm_head.bias") - names.begin());
  b.parameters()[slot].setConstant(0.0);
  const Vector logits = b.mlm_logits(Vector::Zero(static_cast<Eigen::Index>(b.hidden_dim())));
  EXPECT_EQ(static_cast<std::size_t>(logits.size()), b.vocabulary_size());
  EXPECT_DOUBLE_EQ(logits.maxCoeff(), logits.minCoeff());
}

TEST(MlmLogits, FiniteFullVocabularyAndAcceptsInterpolatedRepresentations) {
  const auto b = small_backend(10);
  const auto reps = b.encode_mask(two_prompts(b));
  const Vector real = b.mlm_logits(reps[0]);
  EXPECT_EQ(static_cast<std::size_t>(real.size()), b.vocabulary_size());
  EXPECT_TRUE(real.allFinite());
  const Vector mixed = b.mlm_logits(mixup_representations(reps[0], reps[1], 0.3));
  EXPECT_TRUE(mixed.allFinite());
  EXPECT_EQ(mixed.size(), real.size());
}

TEST(MlmLogits, DimensionMismatchIsAnInputError) {
  const auto b = small_backend(10);
  EXPECT_THROW(b.mlm_logits(Vector::Zero(3)), input_error);
}

TEST(ClassifyLogits, ShapeDeterminismAndNormalization) {
  const auto b = small_backend(10);
  std::vector<EncodedExample> batch;
  for (int i = 0; i < 4; ++i) {
    batch.push_back(b.encode_pair({{"w1", "w" + std::to_string(i)}, {"w2"}, 0, "EN"}));
  }
  const Matrix a = b.classify_logits(batch);
  const Matrix again = b.classify_logits(batch);
  EXPECT_EQ(a.rows(), 4);
  EXPECT_EQ(a.cols(), 3);
  EXPECT_EQ(a, again);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    EXPECT_NEAR(softmax(a.row(r).transpose()).sum(), 1.0, 1e-6);
  }
}

TEST(Backend, SameConfigSameParameters) {
  EXPECT_EQ(small_backend(10, {}, 7).parameters(), small_backend(10, {}, 7).parameters());
  EXPECT_FALSE(small_backend(10, {}, 7).parameters() == small_backend(10, {}, 8).parameters());
}

TEST(Backend, ConfigMustDivideHeads) {
  BackendConfig bc;
  bc.hidden_dim = 9;
  bc.attention_heads = 2;
  EXPECT_THROW(ToyBackend(bc, Tokenizer(xlprompt::testing::vocab_with({"a"}))), configuration_error);
}

TEST(GradientCheck, MaskedLmLossOverTwoExamples) {
  auto b = small_backend(10, {"yes", "no", "maybe"}, 3);
  const auto batch = two_prompts(b);
  const VerbalizerIds ids(3, {{"EN", {b.vocabulary().id("yes"), b.vocabulary().id("no"), b.vocabulary().id("maybe")}}});
  const std::vector<LanguageCode> en{"EN"};
  auto loss = [&](ParameterSet& g) {
    double total = 0.0;
    for (const auto& ex : batch) {
      const auto t = b.trace(ex);
      const Vector rep = b.mask_representation(t, ex);
      Vector d_logits;
      total += 0.5 * multilingual_verbalizer_loss(b.mlm_logits(rep), ex.label, ids, en, &d_logits);
      d_logits *= 0.5;
      b.backward_mask(t, ex, b.mlm_backward(rep, d_logits, g), g);
    }
    return total;
  };
  const auto checks = xlprompt::testing::check_gradients(b.parameters(), loss);
  for (const auto& c : checks) {
    EXPECT_LE(c.relative_error, 1e-3) << c.name << " |analytic| " << c.analytic_norm << " |numeric| "
                                      << c.numeric_norm;
  }
}

TEST(GradientCheck, ClassificationHeadLoss) {
  auto b = small_backend(10, {}, 5);
  const std::vector<EncodedExample> batch{b.encode_pair({{"w1", "w2", "w3"}, {"w2"}, 0, "EN"}),
                                          b.encode_pair({{"w4", "w5"}, {"w6", "w7"}, 2, "EN"})};
  auto loss = [&](ParameterSet& g) {
    double total = 0.0;
    for (const auto& ex : batch) {
      const auto t = b.trace(ex);
      const Vector pooled = b.pooled_representation(t);
      Vector d_logits;
      total += finetune_loss(b.class_logits(pooled), ex.label, &d_logits);
      b.backward_pooled(t, b.class_backward(pooled, d_logits, g), g);
    }
    return total;
  };
  const auto checks = xlprompt::testing::check_gradients(b.parameters(), loss);
  for (const auto& c : checks) {
    EXPECT_LE(c.relative_error, 1e-3) << c.name;
  }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  TempDir dir;
  auto b = small_backend(10, {"yes"}, 9);
  b.record_lineage("pretrain:1");
  save_checkpoint(b, dir.path / "a.ckpt");
  const ToyBackend loaded = load_checkpoint(dir.path / "a.ckpt");
  EXPECT_EQ(loaded.parameters(), b.parameters());
  EXPECT_EQ(loaded.config(), b.config());
  EXPECT_EQ(loaded.vocabulary(), b.vocabulary());
  EXPECT_EQ(loaded.seed_lineage(), b.seed_lineage());
  save_checkpoint(loaded, dir.path / "b.ckpt");
  std::ifstream fa(dir.path / "a.ckpt", std::ios::binary), fb(dir.path / "b.ckpt", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(sa, sb);
}

TEST(Checkpoint, GarbageAndMissingFiles) {
  TempDir dir;
  std::ofstream(dir.path / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir.path / "junk.ckpt"), input_error);
  EXPECT_THROW(load_checkpoint(dir.path / "none.ckpt"), environment_error);
}

TEST(Attach, ToyDescriptorGivesConfiguredWidth) {
  TempDir dir;
  const auto b = small_backend(10);
  save_vocabulary_file(b.vocabulary(), dir.path / "vocab.txt");
  std::ofstream(dir.path / "toy.json") << R"({"kind": "toy", "vocabulary": "vocab.txt",
      "config": {"hidden_dim": 12, "attention_heads": 3, "layers": 1}})";
  const ToyBackend attached = attach_external_backend(dir.path / "toy.json");
  EXPECT_EQ(attached.hidden_dim(), 12u);
  EXPECT_EQ(attached.vocabulary_size(), b.vocabulary_size());
}

TEST(Attach, CheckpointPathAndDescriptorAgree) {
  TempDir dir;
  const auto b = small_backend(10, {}, 2);
  save_checkpoint(b, dir.path / "m.ckpt");
  std::ofstream(dir.path / "ckpt.json") << R"({"kind": "checkpoint", "path": "m.ckpt"})";
  EXPECT_EQ(attach_external_backend(dir.path / "m.ckpt").parameters(), b.parameters());
  EXPECT_EQ(attach_external_backend(dir.path / "ckpt.json").parameters(), b.parameters());
}

TEST(Attach, MissingArtifactIsAnEnvironmentError) {
  EXPECT_THROW(attach_external_backend("/nonexistent/model.ckpt"), environment_error);
  TempDir dir;
  std::ofstream(dir.path / "d.json") << R"({"kind": "checkpoint", "path": "gone.ckpt"})";
  EXPECT_THROW(attach_external_backend(dir.path / "d.json"), environment_error);
}

TEST(Attach, VerbalizerTokenSplitIntoSubtokensIsListed) {
  TempDir dir;
  // "maybe" is only reachable as "may" + "##be" under the subword tokenizer.
  save_vocabulary_file(xlprompt::testing::vocab_with({"yes", "no", "may", "##be"}), dir.path / "vocab.txt");
  std::ofstream(dir.path / "sub.json") << R"({"kind": "toy", "vocabulary": "vocab.txt",
      "tokenizer": "greedy_subword", "config": {"hidden_dim": 8}})";
  const MultilingualVerbalizer mv({"e", "c", "n"}, {{"EN", {"yes", "no", "maybe"}}});
  try {
    attach_external_backend(dir.path / "sub.json", &mv);
    FAIL() << "expected a validation error";
  } catch (const validation_error& e) {
    ASSERT_EQ(e.offending().size(), 1u);
    EXPECT_NE(e.offending()[0].find("maybe"), std::string::npos);
    EXPECT_NE(e.offending()[0].find("2 subtokens"), std::string::npos);
  }
}

class Pretraining : public ::testing::Test {
protected:
  static synth::DeskConfig config() {
    synth::DeskConfig c;
    c.task.vocabulary_size = 40;
    c.task.train_per_class = 8;
    c.task.dev_per_class = 8;
    c.task.test_per_class = 4;
    c.pseudo_languages = 2;
    c.pretrain_sequences = 200;
    c.backend.hidden_dim = 16;
    c.backend.layers = 1;
    c.backend.init_std = 0.2;
    return c;
  }
};

TEST_F(Pretraining, ZeroStepsLeaveParametersUnchanged) {
  auto c = config();
  c.pretrain.steps = 0;
  const auto data = synth::make_desk_data(c);
  BackendConfig bc = c.backend;
  bc.vocabulary_size = data.vocabulary.size();
  const ToyBackend fresh(bc, Tokenizer(data.vocabulary));
  EXPECT_EQ(synth::make_pretrained_backend(data).parameters(), fresh.parameters());
}

TEST_F(Pretraining, HundredStepsLowerTheLossAndBeatChance) {
  auto c = config();
  c.pretrain.steps = 100;
  const auto data = synth::make_desk_data(c);
  BackendConfig bc = c.backend;
  bc.vocabulary_size = data.vocabulary.size();
  const ToyBackend fresh(bc, Tokenizer(data.vocabulary));
  PretrainReport report;
  const ToyBackend trained = synth::make_pretrained_backend(data, &report);
  ASSERT_EQ(report.step_losses.size(), 100u);
  EXPECT_LT(report.step_losses.back(), report.step_losses.front());

  // Held-out lines: a corpus drawn from a different seed.
  auto held = c;
  held.task.seed = 99;
  const auto held_corpus = synth::make_desk_data(held).corpus;
  const auto before = evaluate_masked_lm(fresh, held_corpus, 0.15, 3);
  const auto after = evaluate_masked_lm(trained, held_corpus, 0.15, 3);
  EXPECT_LT(after.loss, before.loss);
  EXPECT_GT(after.accuracy, 1.0 / static_cast<double>(data.vocabulary.size()));
}

TEST_F(Pretraining, DeterministicGivenSeed) {
  auto c = config();
  c.pretrain.steps = 10;
  const auto data = synth::make_desk_data(c);
  EXPECT_EQ(synth::make_pretrained_backend(data).parameters(), synth::make_pretrained_backend(data).parameters());
}

TEST_F(Pretraining, EmptyCorpusIsAnInputError) {
  auto b = small_backend(10);
  EXPECT_THROW(pretrain_toy(b, PretrainCorpus{}, PretrainConfig{}), input_error);
}
