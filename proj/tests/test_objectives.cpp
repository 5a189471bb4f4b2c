#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "gradcheck.hpp"
#include "xlprompt/objectives/losses.hpp"

using namespace xlprompt;

namespace {

// Independent reference: log-probabilities via a max-shifted sum of exponentials.
std::vector<double> oracle_log_softmax(const std::vector<double>& z) {
  double peak = z[0];
  for (double v : z) {
    peak = v > peak ? v : peak;
  }
  double total = 0.0;
  for (double v : z) {
    total += std::exp(v - peak);
  }
  std::vector<double> out;
  for (double v : z) {
    out.push_back(v - peak - std::log(total));
  }
  return out;
}

Vector vec(std::initializer_list<double> xs) { return from_std(std::vector<double>(xs)); }

// V = {yes, no, Evet, hicbir}: EN entailment -> 0, TR entailment -> 2.
VerbalizerIds four_token_verbalizer() { return VerbalizerIds(2, {{"EN", {0, 1}}, {"TR", {2, 3}}}); }

const std::vector<LanguageCode> en_tr{"EN", "TR"};

} // namespace

TEST(VerbalizerLoss, UniformLogitsGiveLogVocabulary) {
  const auto mv = four_token_verbalizer();
  for (std::size_t label : {0u, 1u}) {
    EXPECT_NEAR(multilingual_verbalizer_loss(Vector::Zero(4), label, mv, en_tr), std::log(4.0), 1e-12);
  }
}

TEST(VerbalizerLoss, TwoLanguageWorkedExample) {
  const Vector logits = vec({2, 0, 0, 0});
  const auto lp = oracle_log_softmax({2, 0, 0, 0});
  const double expected = -0.5 * (lp[0] + lp[2]);
  EXPECT_NEAR(multilingual_verbalizer_loss(logits, 0, four_token_verbalizer(), en_tr), expected, 1e-12);
  // Closed form: log(e^2 + 3) - 1.
  EXPECT_NEAR(expected, std::log(std::exp(2.0) + 3.0) - 1.0, 1e-12);
  EXPECT_NEAR(expected, 1.3408, 1e-4);
}

TEST(VerbalizerLoss, MatchesOracleOnRandomCases) {
  Rng rng(2024);
  const std::vector<LanguageCode> all{"EN", "L1", "L2", "L3", "L4", "L5"};
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t vocab = 6 + rng.index(40);
    const std::size_t classes = 2 + rng.index(3);
    std::vector<std::pair<LanguageCode, std::vector<TokenId>>> entries;
    for (const auto& lang : all) {
      std::vector<TokenId> ids;
      for (std::size_t c = 0; c < classes; ++c) {
        ids.push_back(static_cast<TokenId>(rng.index(vocab)));
      }
      entries.emplace_back(lang, ids);
    }
    const VerbalizerIds mv(classes, entries);
    std::vector<LanguageCode> subset;
    for (const auto& lang : all) {
      if (rng.uniform() < 0.5) {
        subset.push_back(lang);
      }
    }
    if (subset.empty()) {
      subset.push_back(all[rng.index(all.size())]);
    }
    std::vector<double> z(vocab);
    for (double& v : z) {
      v = rng.normal(0.0, 4.0);
    }
    const std::size_t label = rng.index(classes);

    const auto lp = oracle_log_softmax(z);
    double expected = 0.0;
    for (const auto& lang : subset) {
      for (const auto& [l, ids] : entries) {
        if (l == lang) {
          expected -= lp[static_cast<std::size_t>(ids[label])];
        }
      }
    }
    expected /= static_cast<double>(subset.size());
    ASSERT_NEAR(multilingual_verbalizer_loss(from_std(z), label, mv, subset), expected, 1e-6) << "trial " << trial;
  }
}

TEST(VerbalizerLoss, SourceOnlyIsPlainCrossEntropyAtTheSourceToken) {
  Rng rng(7);
  const auto mv = four_token_verbalizer();
  const std::vector<LanguageCode> en{"EN"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(4);
    for (double& v : z) {
      v = rng.normal(0.0, 2.0);
    }
    const std::size_t label = rng.index(2);
    EXPECT_NEAR(multilingual_verbalizer_loss(from_std(z), label, mv, en), -oracle_log_softmax(z)[label], 1e-6);
  }
}

TEST(VerbalizerLoss, NonNegativeAndGradientSumsToZero) {
  Rng rng(11);
  const auto mv = four_token_verbalizer();
  for (int trial = 0; trial < 200; ++trial) {
    Vector z(4);
    for (Eigen::Index i = 0; i < 4; ++i) {
      z[i] = rng.normal(0.0, 5.0);
    }
    Vector d;
    EXPECT_GE(multilingual_verbalizer_loss(z, rng.index(2), mv, en_tr, &d), 0.0);
    EXPECT_NEAR(d.sum(), 0.0, 1e-12);
  }
}

TEST(VerbalizerLoss, Errors) {
  const auto mv = four_token_verbalizer();
  EXPECT_THROW(multilingual_verbalizer_loss(Vector::Zero(4), 0, mv, std::vector<LanguageCode>{}), input_error);
  EXPECT_THROW(multilingual_verbalizer_loss(Vector::Zero(4), 2, mv, en_tr), input_error);
  EXPECT_THROW(multilingual_verbalizer_loss(Vector::Zero(4), 0, mv, std::vector<LanguageCode>{"DE"}),
               configuration_error);
}

TEST(Lambda, BetaMomentsAtAlphaOnePointTwo) {
  Rng rng(31);
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double l = sample_lambda(1.2, rng);
    ASSERT_GE(l, 0.0);
    ASSERT_LE(l, 1.0);
    sum += l;
    sq += l * l;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  const double a = 1.2;
  const double analytic = a * a / ((2 * a) * (2 * a) * (2 * a + 1));
  EXPECT_NEAR(analytic, 0.0735, 1e-4);
  EXPECT_NEAR(mean, 0.5, 0.01);
  EXPECT_NEAR(var, analytic, 0.005);
}

TEST(Lambda, NonPositiveAlphaIsRejected) {
  Rng rng(0);
  EXPECT_THROW(sample_lambda(0.0, rng), input_error);
  EXPECT_THROW(sample_lambda(-1.0, rng), input_error);
}

TEST(Interpolation, HandComputedAndEndpoints) {
  const Vector mi = vec({2, -1, 3}), mj = vec({0, 4, 1});
  const Vector mixed = mixup_representations(mi, mj, 0.3);
  const Vector expected = vec({0.6, 2.5, 1.6});
  EXPECT_LE((mixed - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(mixup_representations(mi, mj, 1.0), mi);
  EXPECT_EQ(mixup_representations(mi, mj, 0.0), mj);
  EXPECT_EQ(mixup_representations(vec({1, 0}), vec({0, 1}), 0.5), vec({0.5, 0.5}));
}

TEST(Interpolation, JacobianIsScaledIdentity) {
  const Vector mi = vec({0.3, -1.2, 2.0}), mj = vec({1.0, 0.5, -0.7});
  const double lambda = 0.37, h = 1e-6;
  for (Eigen::Index k = 0; k < 3; ++k) {
    Vector up = mi, down = mi;
    up[k] += h;
    down[k] -= h;
    const Vector di = (mixup_representations(up, mj, lambda) - mixup_representations(down, mj, lambda)) / (2 * h);
    up = mj;
    down = mj;
    up[k] += h;
    down[k] -= h;
    const Vector dj = (mixup_representations(mi, up, lambda) - mixup_representations(mi, down, lambda)) / (2 * h);
    for (Eigen::Index r = 0; r < 3; ++r) {
      EXPECT_NEAR(di[r], r == k ? lambda : 0.0, 1e-8);
      EXPECT_NEAR(dj[r], r == k ? 1.0 - lambda : 0.0, 1e-8);
    }
  }
}

TEST(Interpolation, Errors) {
  EXPECT_THROW(mixup_representations(vec({1, 2}), vec({1, 2, 3}), 0.5), input_error);
  EXPECT_THROW(mixup_representations(vec({1}), vec({2}), 1.5), input_error);
}

TEST(MixupLoss, EndpointReducesToVerbalizerLoss) {
  const auto mv = four_token_verbalizer();
  const Vector z = vec({0.4, -1.0, 2.2, 0.1});
  EXPECT_NEAR(mixup_loss(z, 1.0, 0, 1, mv, en_tr), multilingual_verbalizer_loss(z, 0, mv, en_tr), 1e-12);
  EXPECT_NEAR(mixup_loss(z, 0.0, 0, 1, mv, en_tr), multilingual_verbalizer_loss(z, 1, mv, en_tr), 1e-12);
}

TEST(MixupLoss, SameLabelsAreLambdaIndependent) {
  const auto mv = four_token_verbalizer();
  const Vector z = vec({0.4, -1.0, 2.2, 0.1});
  for (double lambda : {0.0, 0.2, 0.5, 0.9}) {
    EXPECT_NEAR(mixup_loss(z, lambda, 1, 1, mv, en_tr), multilingual_verbalizer_loss(z, 1, mv, en_tr), 1e-12);
  }
}

TEST(MixupLoss, UniformHeadGivesLogFour) {
  const auto mv = four_token_verbalizer();
  for (double lambda : {0.1, 0.5, 0.77}) {
    EXPECT_NEAR(mixup_loss(Vector::Zero(4), lambda, 0, 1, mv, en_tr), std::log(4.0), 1e-12);
  }
}

TEST(MixupLoss, LinearInLambdaAtFixedRepresentation) {
  Rng rng(3);
  const auto mv = four_token_verbalizer();
  for (int trial = 0; trial < 100; ++trial) {
    Vector z(4);
    for (Eigen::Index i = 0; i < 4; ++i) {
      z[i] = rng.normal(0.0, 3.0);
    }
    const double lambda = rng.uniform();
    const std::size_t yi = rng.index(2), yj = rng.index(2);
    const double combined =
        lambda * mixup_loss(z, 1.0, yi, yj, mv, en_tr) + (1 - lambda) * mixup_loss(z, 1.0, yj, yi, mv, en_tr);
    EXPECT_NEAR(mixup_loss(z, lambda, yi, yj, mv, en_tr), combined, 1e-6);
  }
}

TEST(MixupLoss, VirtualExampleAppliesTheHead) {
  const auto mv = four_token_verbalizer();
  MixupVirtualExample v;
  v.representation = vec({1.0, 2.0});
  v.lambda = 0.4;
  v.label_i = 0;
  v.label_j = 1;
  const Matrix head = (Matrix(4, 2) << 1, 0, 0, 1, 1, 1, -1, 0).finished();
  const auto apply = [&](const Vector& m) -> Vector { return head * m; };
  EXPECT_NEAR(mixup_loss(v, mv, en_tr, apply), mixup_loss(head * v.representation, 0.4, 0, 1, mv, en_tr), 1e-12);
}

TEST(MixupLoss, Errors) {
  const auto mv = four_token_verbalizer();
  EXPECT_THROW(mixup_loss(Vector::Zero(4), 0.5, 0, 1, mv, std::vector<LanguageCode>{}), input_error);
  EXPECT_THROW(mixup_loss(Vector::Zero(4), 0.5, 0, 5, mv, en_tr), input_error);
  EXPECT_THROW(mixup_loss(Vector::Zero(4), -0.1, 0, 1, mv, en_tr), input_error);
}

TEST(Pairing, DisjointAdjacentPairs) {
  Rng rng(1);
  for (auto [size, expected] : std::vector<std::pair<std::size_t, std::size_t>>{{8, 4}, {1, 0}, {5, 2}, {0, 0}}) {
    std::vector<Vector> reps(size, Vector::Ones(3));
    std::vector<std::size_t> labels(size, 0);
    const auto virtuals = pair_batch(reps, labels, 1.2, rng);
    ASSERT_EQ(virtuals.size(), expected) << "batch " << size;
    for (std::size_t p = 0; p < virtuals.size(); ++p) {
      EXPECT_EQ(virtuals[p].index_i, 2 * p);
      EXPECT_EQ(virtuals[p].index_j, 2 * p + 1);
    }
  }
}

TEST(Pairing, FreshLambdaPerPairAndCarriedLabels) {
  Rng rng(9);
  std::vector<Vector> reps;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 8; ++i) {
    reps.push_back(Vector::Constant(2, static_cast<double>(i)));
    labels.push_back(i % 3);
  }
  const auto v = pair_batch(reps, labels, 1.2, rng);
  std::set<double> lambdas;
  for (const auto& e : v) {
    lambdas.insert(e.lambda);
    EXPECT_EQ(e.label_i, labels[e.index_i]);
    EXPECT_EQ(e.label_j, labels[e.index_j]);
    const Vector expected = mixup_representations(reps[e.index_i], reps[e.index_j], e.lambda);
    EXPECT_EQ(e.representation, expected);
  }
  EXPECT_EQ(lambdas.size(), v.size());
}

TEST(Pairing, OverlappingModeAndMismatchedInputs) {
  Rng rng(1);
  std::vector<Vector> reps(5, Vector::Ones(2));
  std::vector<std::size_t> labels(5, 0);
  EXPECT_EQ(pair_batch(reps, labels, 1.2, rng, PairingMode::overlapping).size(), 4u);
  labels.pop_back();
  EXPECT_THROW(pair_batch(reps, labels, 1.2, rng), input_error);
  EXPECT_EQ(parse_pairing_mode(to_string(PairingMode::overlapping)), PairingMode::overlapping);
  EXPECT_THROW(parse_pairing_mode("triples"), configuration_error);
}

TEST(FinetuneLoss, Examples) {
  EXPECT_NEAR(finetune_loss(Vector::Zero(3), 1), std::log(3.0), 1e-12);
  const double expected = -oracle_log_softmax({1, 2, 3})[2];
  EXPECT_NEAR(finetune_loss(vec({1, 2, 3}), 2), expected, 1e-12);
  EXPECT_NEAR(expected, 0.4076, 1e-4);
  EXPECT_LT(finetune_loss(vec({60, 0, 0}), 0), 1e-20);
  EXPECT_THROW(finetune_loss(Vector::Zero(3), 3), input_error);
}

class PipelineGradients : public ::testing::TestWithParam<Method> {};

TEST_P(PipelineGradients, MatchFiniteDifferences) {
  const auto checks = xlprompt::testing::pipeline_gradient_check(GetParam());
  for (const auto& c : checks) {
    EXPECT_LE(c.relative_error, 1e-3) << c.name << " |analytic| " << c.analytic_norm << " |numeric| "
                                      << c.numeric_norm;
  }
}

INSTANTIATE_TEST_SUITE_P(Methods, PipelineGradients,
                         ::testing::Values(Method::ours, Method::ours_no_mv, Method::up, Method::ft),
                         [](const auto& info) { return std::string(to_string(info.param)); });
