#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"
#include "xlprompt/core/rng.hpp"
#include "xlprompt/prompt/template.hpp"
#include "xlprompt/prompt/verbalizer.hpp"

using namespace xlprompt;
using xlprompt::testing::bundled;
using xlprompt::testing::pair;

namespace {

TaskLexicon xnli() { return load_task_lexicon(bundled("xnli.json")); }

std::string prompt_text(TemplateVariant v, const LanguageCode& lang) {
  const auto lex = xnli();
  return join_tokens(build_prompt(pair("A", "B"), lex.make_template(v), lang).tokens);
}

std::vector<Token> verbalizer_for(TemplateVariant v, const LanguageCode& lang) {
  const auto lex = xnli();
  return inference_verbalizer_for(v, lang, lex.verbalizers).tokens;
}

const std::vector<Token> en_answers{"yes", "no", "maybe"};
const std::vector<Token> tr_answers{"Evet", "hiçbir", "belki"};

} // namespace

// One test per design row, EN and TR, prompt and inference verbalizer.

TEST(VariantRows, ZhaoFull) {
  EXPECT_EQ(prompt_text(TemplateVariant::zhao_full, "EN"), "A . Question : B ? Answer : <mask> .");
  EXPECT_EQ(prompt_text(TemplateVariant::zhao_full, "TR"), "A . Soru : B ? Cevap : <mask> .");
  EXPECT_EQ(verbalizer_for(TemplateVariant::zhao_full, "EN"), en_answers);
  EXPECT_EQ(verbalizer_for(TemplateVariant::zhao_full, "TR"), tr_answers);
}

TEST(VariantRows, WithoutTemplateTranslation) {
  EXPECT_EQ(prompt_text(TemplateVariant::no_template_translation, "EN"), "A . Question : B ? Answer : <mask> .");
  EXPECT_EQ(prompt_text(TemplateVariant::no_template_translation, "TR"), "A . Question : B ? Answer : <mask> .");
  EXPECT_EQ(verbalizer_for(TemplateVariant::no_template_translation, "TR"), tr_answers);
}

TEST(VariantRows, WithoutVerbalizerTranslation) {
  EXPECT_EQ(prompt_text(TemplateVariant::no_verbalizer_translation, "EN"), "A . Question : B ? Answer : <mask> .");
  EXPECT_EQ(prompt_text(TemplateVariant::no_verbalizer_translation, "TR"), "A . Soru : B ? Cevap : <mask> .");
  EXPECT_EQ(verbalizer_for(TemplateVariant::no_verbalizer_translation, "TR"), en_answers);
}

TEST(VariantRows, WithoutPromptingWords) {
  EXPECT_EQ(prompt_text(TemplateVariant::no_prompting_words, "EN"), "A . B ? <mask> .");
  EXPECT_EQ(prompt_text(TemplateVariant::no_prompting_words, "TR"), "A . B ? <mask> .");
  EXPECT_EQ(verbalizer_for(TemplateVariant::no_prompting_words, "TR"), tr_answers);
}

TEST(VariantRows, UniversalPrompting) {
  EXPECT_EQ(prompt_text(TemplateVariant::universal, "EN"), "A . B ? <mask> .");
  EXPECT_EQ(prompt_text(TemplateVariant::universal, "TR"), "A . B ? <mask> .");
  EXPECT_EQ(verbalizer_for(TemplateVariant::universal, "EN"), en_answers);
  EXPECT_EQ(verbalizer_for(TemplateVariant::universal, "TR"), en_answers);
}

TEST(VariantRows, RenderAttachesColons) {
  const auto lex = xnli();
  const auto p = build_prompt(pair("A", "B"), lex.make_template(TemplateVariant::zhao_full), "EN");
  EXPECT_EQ(render(p.tokens), "A . Question: B ? Answer: <mask> .");
}

TEST(BuildPrompt, MissingPromptingWordsNamesLanguageAndVariant) {
  const auto lex = xnli();
  const PromptTemplate tmpl = lex.make_template(TemplateVariant::zhao_full);
  try {
    build_prompt(pair("A", "B"), tmpl, "XX");
    FAIL() << "expected a configuration error";
  } catch (const configuration_error& e) {
    EXPECT_NE(std::string(e.what()).find("XX"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("zhao_full"), std::string::npos);
  }
  // Source words suffice when templates are not translated.
  EXPECT_NO_THROW(build_prompt(pair("A", "B"), lex.make_template(TemplateVariant::no_template_translation), "XX"));
}

TEST(BuildPrompt, WordFreeVariantsDropPromptingWords) {
  const auto lex = xnli();
  EXPECT_TRUE(lex.make_template(TemplateVariant::universal).prompting_words().empty());
  EXPECT_TRUE(lex.make_template(TemplateVariant::no_prompting_words).prompting_words().empty());
  EXPECT_FALSE(lex.make_template(TemplateVariant::zhao_full).prompting_words().empty());
}

TEST(BuildPrompt, PunctuationIsAlwaysInserted) {
  const auto lex = xnli();
  const auto p = build_prompt(pair("x y .", "z ?"), lex.make_template(TemplateVariant::universal), "EN");
  EXPECT_EQ(join_tokens(p.tokens), "x y . . z ? ? <mask> .");
}

TEST(BuildPrompt, TruncatesLongestSentenceFromTheEnd) {
  const auto lex = xnli();
  const auto tmpl = lex.make_template(TemplateVariant::universal);
  // Scaffold is 4 tokens; budget 9 leaves 5 for the pair.
  const auto p = build_prompt(pair("a1 a2 a3 a4 a5 a6", "b1 b2 b3"), tmpl, "EN", 9);
  // 6+3 -> 5+3 -> 4+3 -> 3+3 -> tie drops from A -> 2+3.
  EXPECT_EQ(join_tokens(p.tokens), "a1 a2 . b1 b2 b3 ? <mask> .");
  EXPECT_EQ(p.tokens.size(), 9u);
  EXPECT_EQ(p.tokens[p.mask_position], mask_token);

  const auto zhao = lex.make_template(TemplateVariant::zhao_full);
  const auto q = build_prompt(pair("a1 a2 a3", "b1 b2 b3 b4"), zhao, "EN", 12);
  EXPECT_EQ(join_tokens(q.tokens), "a1 a2 . Question : b1 b2 ? Answer : <mask> .");
}

TEST(BuildPrompt, LengthThatCannotHoldTheScaffoldIsRejected) {
  const auto lex = xnli();
  EXPECT_THROW(build_prompt(pair("a", "b"), lex.make_template(TemplateVariant::universal), "EN", 4),
               configuration_error);
  EXPECT_THROW(build_prompt(pair("a", "b"), lex.make_template(TemplateVariant::universal), "EN", 5),
               configuration_error);
  EXPECT_NO_THROW(build_prompt(pair("a", "b"), lex.make_template(TemplateVariant::universal), "EN", 6));
}

TEST(BuildPrompt, EmptySentenceIsAnInputError) {
  const auto lex = xnli();
  LabeledPair p{{}, {"b"}, 0, "EN"};
  EXPECT_THROW(build_prompt(p, lex.make_template(TemplateVariant::universal), "EN"), input_error);
}

// Property checks over random pairs, every variant and every bundled language.
class PromptProperties : public ::testing::Test {
protected:
  std::vector<LabeledPair> random_pairs(std::size_t n) {
    Rng rng(42);
    std::vector<LabeledPair> out;
    for (std::size_t i = 0; i < n; ++i) {
      LabeledPair p;
      const std::size_t la = 1 + rng.index(12);
      const std::size_t lb = 1 + rng.index(12);
      for (std::size_t j = 0; j < la; ++j) p.sentence_a.push_back("a" + std::to_string(rng.index(50)));
      for (std::size_t j = 0; j < lb; ++j) p.sentence_b.push_back("b" + std::to_string(rng.index(50)));
      p.label = rng.index(3);
      out.push_back(p);
    }
    return out;
  }
  TaskLexicon lex = xnli();
};

TEST_F(PromptProperties, ExactlyOneMaskAtMaskPosition) {
  for (const auto& p : random_pairs(200)) {
    for (auto v : all_template_variants) {
      for (const auto& lang : lex.verbalizers.languages()) {
        for (std::size_t max_len : {PromptTemplate::unlimited_length, std::size_t{14}}) {
          const auto out = build_prompt(p, lex.make_template(v), lang, max_len);
          ASSERT_EQ(std::count(out.tokens.begin(), out.tokens.end(), mask_token), 1);
          ASSERT_EQ(out.tokens[out.mask_position], mask_token);
          ASSERT_LE(out.tokens.size(), max_len);
          ASSERT_EQ(out.label, p.label);
        }
      }
    }
  }
}

TEST_F(PromptProperties, UniversalEqualsNoPromptingWords) {
  for (const auto& p : random_pairs(200)) {
    for (const auto& lang : lex.verbalizers.languages()) {
      EXPECT_EQ(build_prompt(p, lex.make_template(TemplateVariant::universal), lang).tokens,
                build_prompt(p, lex.make_template(TemplateVariant::no_prompting_words), lang).tokens);
    }
  }
}

TEST_F(PromptProperties, SourceLanguageCollapsesToTwoLayouts) {
  for (const auto& p : random_pairs(50)) {
    std::set<TokenSequence> layouts;
    for (auto v : all_template_variants) {
      layouts.insert(build_prompt(p, lex.make_template(v), "EN").tokens);
    }
    EXPECT_EQ(layouts.size(), 2u);
  }
}

TEST_F(PromptProperties, Deterministic) {
  for (const auto& p : random_pairs(50)) {
    for (auto v : all_template_variants) {
      EXPECT_EQ(build_prompt(p, lex.make_template(v), "DE", 12).tokens,
                build_prompt(p, lex.make_template(v), "DE", 12).tokens);
    }
  }
}

TEST(VerbalizerFiles, XnliHasFifteenLanguagesInOrder) {
  const auto mv = load_verbalizer_file(bundled("xnli.json"));
  const std::vector<LanguageCode> expected{"EN", "AR", "BG", "DE", "EL", "ES", "FR", "HI",
                                           "RU", "SW", "TH", "TR", "UR", "VI", "ZH"};
  EXPECT_EQ(mv.languages(), expected);
  EXPECT_EQ(mv.num_classes(), 3u);
}

TEST(VerbalizerFiles, PawsxMatchesPublishedTokens) {
  const auto mv = load_verbalizer_file(bundled("pawsx.json"));
  const std::map<LanguageCode, std::vector<Token>> expected{
      {"EN", {"yes", "no"}}, {"DE", {"Ja", "Nein"}}, {"ES", {"sí", "no"}}, {"FR", {"Oui", "non"}},
      {"JA", {"はい", "ない"}}, {"ZH", {"是", "否"}},  {"KO", {"예", "아니"}}};
  ASSERT_EQ(mv.languages().size(), expected.size());
  for (const auto& [lang, tokens] : expected) {
    EXPECT_EQ(mv.at(lang).tokens, tokens) << lang;
  }
  EXPECT_EQ(mv.label_name(0), "paraphrase");
}

TEST(VerbalizerFiles, DuplicateTokenIsRejected) {
  const nlohmann::json doc = nlohmann::json::parse(R"({"labels": ["a", "b"],
      "languages": [{"code": "EN", "verbalizer": {"a": "yes", "b": "yes"}}]})");
  try {
    parse_task_lexicon(doc);
    FAIL();
  } catch (const validation_error& e) {
    ASSERT_EQ(e.offending().size(), 1u);
    EXPECT_NE(e.offending()[0].find("yes"), std::string::npos);
  }
}

TEST(VerbalizerFiles, UnknownLabelMissingEnglishAndMultiWordAreRejected) {
  EXPECT_THROW(parse_task_lexicon(nlohmann::json::parse(R"({"labels": ["a"],
      "languages": [{"code": "EN", "verbalizer": {"a": "x", "zzz": "y"}}]})")),
               validation_error);
  EXPECT_THROW(parse_task_lexicon(nlohmann::json::parse(R"({"labels": ["a"],
      "languages": [{"code": "DE", "verbalizer": {"a": "x"}}]})")),
               validation_error);
  EXPECT_THROW(parse_task_lexicon(nlohmann::json::parse(R"({"labels": ["a"],
      "languages": [{"code": "EN", "verbalizer": {"a": "two words"}}]})")),
               validation_error);
}

TEST(VerbalizerFiles, TokensAbsentFromBackendVocabularyAreListed) {
  const Tokenizer tok(xlprompt::testing::vocab_with({"yes", "no"}));
  try {
    load_verbalizer_file(bundled("pawsx.json"), &tok);
    FAIL();
  } catch (const validation_error& e) {
    // Every non-English token is missing (EN "no" and ES "no" are present).
    EXPECT_EQ(e.offending().size(), 11u);
  }
}

TEST(VerbalizerFiles, CasingIsPreserved) {
  const auto mv = load_verbalizer_file(bundled("xnli.json"));
  EXPECT_EQ(mv.at("TR").tokens[0], "Evet");
  EXPECT_EQ(load_verbalizer_file(bundled("pawsx.json")).at("DE").tokens[0], "Ja");
}

TEST(VerbalizerFiles, MissingFileIsAnEnvironmentError) {
  EXPECT_THROW(load_verbalizer_file("/nonexistent/v.json"), environment_error);
}

TEST(VerbalizerFiles, LexiconJsonRoundTrips) {
  const auto lex = xnli();
  const auto again = parse_task_lexicon(nlohmann::json::parse(to_json(lex).dump()));
  EXPECT_EQ(again.verbalizers.languages(), lex.verbalizers.languages());
  for (const auto& l : lex.verbalizers.languages()) {
    EXPECT_EQ(again.verbalizers.at(l), lex.verbalizers.at(l));
  }
  EXPECT_EQ(again.prompting_words, lex.prompting_words);
}

TEST(InferenceVerbalizer, RequiredTargetMustExist) {
  const auto lex = xnli();
  EXPECT_THROW(inference_verbalizer_for(TemplateVariant::zhao_full, "XX", lex.verbalizers), configuration_error);
  EXPECT_EQ(inference_verbalizer_for(TemplateVariant::universal, "XX", lex.verbalizers).language, "EN");
}
