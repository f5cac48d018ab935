#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "emobench/emobench.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace emobench;

namespace {

const CategorySet kCats = synth::iemocap_categories();

Candidate candidate(int index, std::vector<double> p, double loglik, int tokens = 10) {
  Candidate c;
  c.index = index;
  c.raw_text = "candidate " + std::to_string(index);
  c.parsed = normalize(p, kCats);
  c.parse_strategy = ParseStrategy::kJsonDict;
  c.log_likelihood = loglik;
  c.token_count = tokens;
  return c;
}

Candidate unparseable(int index, double loglik) {
  Candidate c;
  c.index = index;
  c.raw_text = "no idea";
  c.log_likelihood = loglik;
  return c;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIoError;
}

/// Serves canned candidates and scores verifier calls by a lookup table.
class FakeProvider : public CandidateProvider {
 public:
  std::vector<Candidate> canned;
  std::map<int, double> scores;
  int verifier_calls = 0;

  std::vector<Candidate> candidates(const CandidateQuery&) override { return canned; }
  VerifierOutcome verifier_score(const CandidateQuery&, const Candidate& c, std::string_view prompt) override {
    ++verifier_calls;
    EXPECT_NE(std::string(prompt).find(c.raw_text), std::string::npos);
    return {scores.at(c.index), false};
  }
};

AnnotatedUtterance utterance() {
  AnnotatedUtterance u;
  u.utterance_id = "u1";
  u.transcript = "hello";
  u.rater_labels = {{"Anger"}};
  return u;
}

}  // namespace

TEST(SoftmaxWeights, SumShiftAndClosedForm) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> a(5);
    for (auto& x : a) x = n(rng);
    auto w = softmax_weights(a);
    double sum = 0;
    for (double x : w) sum += x;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    auto ref = oracle::softmax(a);
    std::vector<double> shifted = a;
    for (auto& x : shifted) x += 123.0;
    auto ws = softmax_weights(shifted);
    for (std::size_t b = 0; b < a.size(); ++b) {
      EXPECT_NEAR(w[b], ref[b], 1e-12);
      EXPECT_NEAR(w[b], ws[b], 1e-12);
    }
  }
  auto w = softmax_weights(std::vector<double>{0.0, std::log(3.0)});
  EXPECT_NEAR(w[0], 0.25, 1e-12);
  EXPECT_NEAR(w[1], 0.75, 1e-12);
}

TEST(SoftmaxWeights, ExtremeAndNonFiniteScores) {
  auto w = softmax_weights(std::vector<double>{-1e6, -1e6 - 1.0});
  EXPECT_NEAR(w[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  const double ninf = -std::numeric_limits<double>::infinity();
  auto partial = softmax_weights(std::vector<double>{ninf, 0.0, std::nan("")});
  EXPECT_EQ(partial, (std::vector<double>{0.0, 1.0, 0.0}));
  EXPECT_EQ(code_of([&] { softmax_weights(std::vector<double>{ninf, ninf}); }), ErrorCode::kNoFiniteScores);
}

TEST(DirectNormalizedWeights, DividesBySum) {
  auto w = direct_normalized_weights(std::vector<double>{0.2, 0.6, 0.2});
  EXPECT_NEAR(w[1], 0.6, 1e-15);
  auto zeros = direct_normalized_weights(std::vector<double>{0.0, 0.0});
  EXPECT_EQ(zeros, (std::vector<double>{0.5, 0.5}));
}

TEST(AggregateDmm, MatchesWeightedSumAndIgnoresTau) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<Candidate> cs;
    std::vector<std::vector<double>> ps;
    for (int b = 1; b <= 4; ++b) {
      cs.push_back(candidate(b, synth::random_simplex(4, rng, 0.2), 0));
      ps.push_back(cs.back().parsed->probs());
    }
    auto w = synth::random_simplex(4, rng);
    auto ref = oracle::mixture(ps, w);
    auto at1 = aggregate_dmm(cs, w, 1.0);
    for (double tau : {0.5, 10.0}) {
      auto got = aggregate_dmm(cs, w, tau);
      for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_NEAR(got[k], ref[k], 1e-12);
        EXPECT_NEAR(got[k], at1[k], 1e-12);
      }
    }
  }
}

TEST(AggregateDmm, Errors) {
  std::vector<Candidate> none;
  EXPECT_EQ(code_of([&] { aggregate_dmm(none, std::vector<double>{}, 1.0); }), ErrorCode::kEmptyCandidateSet);
  std::vector<Candidate> one{candidate(1, {1, 0, 0, 0}, 0)};
  EXPECT_EQ(code_of([&] { aggregate_dmm(one, std::vector<double>{1.0}, 0.0); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([&] { aggregate_dmm(one, std::vector<double>{0.5, 0.5}, 1.0); }), ErrorCode::kDimensionMismatch);
}

TEST(SelectBest, HighestScoreLowestIndexOnTies) {
  std::vector<Candidate> cs{candidate(2, {1, 0, 0, 0}, -1.0), candidate(1, {0, 1, 0, 0}, -1.0),
                            candidate(3, {0, 0, 1, 0}, -3.0), unparseable(4, 5.0)};
  auto trace = select_best(cs, ScoreSource::kLogLikelihood);
  EXPECT_EQ(trace.selected_index, 1);
  EXPECT_EQ(trace.final_distribution, one_hot(1, kCats));
  EXPECT_EQ(trace.weights, (std::vector<double>{0, 1, 0, 0}));
}

TEST(SelectBest, PerTokenNormalization) {
  std::vector<Candidate> cs{candidate(1, {1, 0, 0, 0}, -10.0, 100), candidate(2, {0, 1, 0, 0}, -5.0, 10)};
  EXPECT_EQ(select_best(cs, ScoreSource::kLogLikelihood, false).selected_index, 2);
  EXPECT_EQ(select_best(cs, ScoreSource::kLogLikelihood, true).selected_index, 1);
}

TEST(SelectBest, AllUnparseable) {
  std::vector<Candidate> cs{unparseable(1, 0), unparseable(2, 0)};
  EXPECT_EQ(code_of([&] { select_best(cs, ScoreSource::kLogLikelihood); }), ErrorCode::kAllCandidatesUnparseable);
}

TEST(WeightedAggregate, DropsUnparseableCandidates) {
  auto config = StrategyConfig::defaults(Strategy::kWeightedBestOfN);
  std::vector<Candidate> cs{candidate(1, {1, 0, 0, 0}, 0.0), unparseable(2, 10.0),
                            candidate(3, {0, 1, 0, 0}, std::log(3.0))};
  auto trace = weighted_aggregate(cs, config);
  EXPECT_EQ(trace.weights[1], 0.0);
  EXPECT_NEAR(trace.final_distribution[0], 0.25, 1e-12);
  EXPECT_NEAR(trace.final_distribution[1], 0.75, 1e-12);
  EXPECT_FALSE(trace.selected_index);
}

TEST(StrategyConfig, DefaultsAndValidation) {
  EXPECT_EQ(StrategyConfig::defaults(Strategy::kBestOfN).num_candidates, 5);
  EXPECT_EQ(StrategyConfig::defaults(Strategy::kWeightedBestOfN).num_candidates, 5);
  EXPECT_EQ(StrategyConfig::defaults(Strategy::kVerifier).num_candidates, 3);
  EXPECT_EQ(StrategyConfig::defaults(Strategy::kWeightedVerifier).num_candidates, 3);
  EXPECT_EQ(StrategyConfig::defaults(Strategy::kCot).prompt_kind(), PromptKind::kCot);
  auto bad = StrategyConfig::defaults(Strategy::kBaseline);
  bad.num_candidates = 2;
  EXPECT_EQ(code_of([&] { bad.validate(); }), ErrorCode::kConfigError);
  auto zero = StrategyConfig::defaults(Strategy::kBestOfN);
  zero.num_candidates = 0;
  EXPECT_EQ(code_of([&] { zero.validate(); }), ErrorCode::kConfigError);
  for (auto s : {"baseline", "cot", "bon", "w-bon", "alm-v", "w-alm-v"}) EXPECT_EQ(to_string(parse_strategy(s)), s);
  EXPECT_THROW(parse_strategy("beam"), Error);
}

TEST(RunStrategy, BaselineReturnsSingleCandidate) {
  FakeProvider provider;
  provider.canned = {candidate(1, {0, 0, 1, 0}, -2)};
  auto book = PromptBook::defaults();
  auto trace = run_strategy(utterance(), kCats, StrategyConfig::defaults(Strategy::kBaseline), provider, {book});
  EXPECT_EQ(trace.final_distribution, one_hot(2, kCats));
  EXPECT_EQ(provider.verifier_calls, 0);
}

TEST(RunStrategy, VerifierStrategiesScoreOnlyParseableCandidates) {
  FakeProvider provider;
  provider.canned = {candidate(1, {1, 0, 0, 0}, -1), unparseable(2, -2), candidate(3, {0, 1, 0, 0}, -3)};
  provider.scores = {{1, 0.2}, {3, 0.9}};
  auto book = PromptBook::defaults();
  auto alm = run_strategy(utterance(), kCats, StrategyConfig::defaults(Strategy::kVerifier), provider, {book});
  EXPECT_EQ(alm.selected_index, 3);
  EXPECT_EQ(provider.verifier_calls, 2);

  auto weighted = StrategyConfig::defaults(Strategy::kWeightedVerifier);
  weighted.weight_source = ScoreSource::kLogLikelihood;  // overridden: w-alm-v always weights by the verifier
  auto trace = run_strategy(utterance(), kCats, weighted, provider, {book});
  auto w = oracle::softmax({0.2, 0.9});
  EXPECT_NEAR(trace.final_distribution[0], w[0], 1e-12);
  EXPECT_NEAR(trace.final_distribution[1], w[1], 1e-12);

  weighted.weight_transform = WeightTransform::kDirectNormalize;
  auto direct = run_strategy(utterance(), kCats, weighted, provider, {book});
  EXPECT_NEAR(direct.final_distribution[1], 0.9 / 1.1, 1e-12);
}

TEST(RunStrategy, BestOfNUsesLogLikelihood) {
  FakeProvider provider;
  provider.canned = {candidate(1, {1, 0, 0, 0}, -4), candidate(2, {0, 0, 0, 1}, -0.5), candidate(3, {0, 1, 0, 0}, -2),
                     candidate(4, {0, 1, 0, 0}, -9), candidate(5, {0, 1, 0, 0}, -9)};
  auto book = PromptBook::defaults();
  auto trace = run_strategy(utterance(), kCats, StrategyConfig::defaults(Strategy::kBestOfN), provider, {book});
  EXPECT_EQ(trace.selected_index, 2);
  EXPECT_EQ(trace.final_distribution, one_hot(3, kCats));
}

TEST(RunStrategy, WrongCandidateCountIsTransportError) {
  FakeProvider provider;
  provider.canned = {candidate(1, {1, 0, 0, 0}, 0)};
  auto book = PromptBook::defaults();
  EXPECT_EQ(code_of([&] {
              run_strategy(utterance(), kCats, StrategyConfig::defaults(Strategy::kBestOfN), provider, {book});
            }),
            ErrorCode::kTransportError);
}
