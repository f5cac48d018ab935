#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emobench/backends.hpp"
#include "emobench/distributions.hpp"
#include "emobench/error.hpp"
#include "emobench/labels.hpp"
#include "emobench/prompts.hpp"

namespace emobench {

enum class Strategy { kBaseline, kCot, kBestOfN, kWeightedBestOfN, kVerifier, kWeightedVerifier };
enum class ScoreSource { kLogLikelihood, kVerifier };
enum class WeightTransform { kSoftmax, kDirectNormalize };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kBaseline: return "baseline";
    case Strategy::kCot: return "cot";
    case Strategy::kBestOfN: return "bon";
    case Strategy::kWeightedBestOfN: return "w-bon";
    case Strategy::kVerifier: return "alm-v";
    case Strategy::kWeightedVerifier: return "w-alm-v";
  }
  return "baseline";
}

inline Strategy parse_strategy(std::string_view name) {
  for (auto s : {Strategy::kBaseline, Strategy::kCot, Strategy::kBestOfN, Strategy::kWeightedBestOfN,
                 Strategy::kVerifier, Strategy::kWeightedVerifier}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::kConfigError, "unknown strategy '" + std::string(name) + "'");
}

inline std::string_view to_string(ScoreSource s) { return s == ScoreSource::kVerifier ? "verifier" : "loglik"; }
inline std::string_view to_string(WeightTransform t) {
  return t == WeightTransform::kDirectNormalize ? "direct-normalize" : "softmax";
}

inline bool needs_verifier(Strategy s) { return s == Strategy::kVerifier || s == Strategy::kWeightedVerifier; }

struct StrategyConfig {
  Strategy strategy = Strategy::kBaseline;
  int num_candidates = 1;
  /// Dirichlet concentration scale; the mixture mean does not depend on it.
  double tau = 1.0;
  ScoreSource weight_source = ScoreSource::kLogLikelihood;
  WeightTransform weight_transform = WeightTransform::kSoftmax;
  /// Divide log-likelihoods by token count before weighting or selection.
  bool per_token_loglik = false;

  /// Defaults: B = 5 for bon/w-bon, B = 3 for the verifier strategies.
  static StrategyConfig defaults(Strategy strategy) {
    StrategyConfig c;
    c.strategy = strategy;
    switch (strategy) {
      case Strategy::kBaseline:
      case Strategy::kCot: c.num_candidates = 1; break;
      case Strategy::kBestOfN:
      case Strategy::kWeightedBestOfN: c.num_candidates = 5; break;
      case Strategy::kVerifier:
      case Strategy::kWeightedVerifier:
        c.num_candidates = 3;
        c.weight_source = ScoreSource::kVerifier;
        break;
    }
    return c;
  }

  void validate() const {
    if ((strategy == Strategy::kBaseline || strategy == Strategy::kCot) && num_candidates != 1) {
      throw Error(ErrorCode::kConfigError, std::string(to_string(strategy)) + " uses exactly one candidate");
    }
    if (num_candidates < 1) throw Error(ErrorCode::kConfigError, "B must be >= 1");
    if (!(tau > 0.0)) throw Error(ErrorCode::kConfigError, "tau must be > 0");
  }

  PromptKind prompt_kind() const { return strategy == Strategy::kCot ? PromptKind::kCot : PromptKind::kBase; }
};

/// What a strategy did for one utterance.
struct AggregationTrace {
  std::vector<Candidate> candidates;
  /// Aligned with `candidates`; dropped candidates carry weight 0.
  std::vector<double> weights;
  /// Sample index of the chosen candidate, for selection strategies only.
  std::optional<int> selected_index;
  EmotionDistribution final_distribution;
};

/// w_b = exp(a_b - max a) / sum_j exp(a_j - max a). Non-finite scores get
/// weight zero.
inline std::vector<double> softmax_weights(std::span<const double> alphas) {
  double max_alpha = -std::numeric_limits<double>::infinity();
  for (double a : alphas) {
    if (std::isfinite(a)) max_alpha = std::max(max_alpha, a);
  }
  if (!std::isfinite(max_alpha)) throw Error(ErrorCode::kNoFiniteScores, "no finite score to weight");
  std::vector<double> weights(alphas.size(), 0.0);
  double total = 0.0;
  for (std::size_t b = 0; b < alphas.size(); ++b) {
    if (std::isfinite(alphas[b])) {
      weights[b] = std::exp(alphas[b] - max_alpha);
      total += weights[b];
    }
  }
  for (double& w : weights) w /= total;
  return weights;
}

/// Scores divided by their sum; all-zero scores fall back to uniform.
inline std::vector<double> direct_normalized_weights(std::span<const double> scores) {
  std::vector<double> weights(scores.size(), 0.0);
  double total = 0.0;
  std::size_t finite = 0;
  for (std::size_t b = 0; b < scores.size(); ++b) {
    if (std::isfinite(scores[b])) {
      weights[b] = std::max(0.0, scores[b]);
      total += weights[b];
      ++finite;
    }
  }
  if (finite == 0) throw Error(ErrorCode::kNoFiniteScores, "no finite score to weight");
  for (std::size_t b = 0; b < scores.size(); ++b) {
    if (!std::isfinite(scores[b])) continue;
    weights[b] = total > 0.0 ? weights[b] / total : 1.0 / static_cast<double>(finite);
  }
  return weights;
}

/// Mean of Dir(tau * p): beta / sum(beta) = p for any tau > 0 when p is on
/// the simplex, so the concentration drops out.
inline const EmotionDistribution& dirichlet_mean(const EmotionDistribution& p, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::kConfigError, "tau must be > 0");
  return p;
}

/// Expected distribution under the weighted Dirichlet mixture, i.e. the
/// weighted sum of the candidates' Dirichlet means.
inline EmotionDistribution aggregate_dmm(std::span<const Candidate> candidates, std::span<const double> weights,
                                         double tau) {
  if (candidates.empty()) throw Error(ErrorCode::kEmptyCandidateSet, "nothing to aggregate");
  if (weights.size() != candidates.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "weights and candidates differ in length");
  }
  std::optional<CategorySet> categories;
  std::vector<double> mixture;
  for (std::size_t b = 0; b < candidates.size(); ++b) {
    if (weights[b] == 0.0) continue;
    if (!candidates[b].parsed) {
      throw Error(ErrorCode::kAllCandidatesUnparseable, "weighted candidate has no parsed distribution");
    }
    const auto& mean = dirichlet_mean(*candidates[b].parsed, tau);
    if (!categories) {
      categories = mean.categories();
      mixture.assign(mean.size(), 0.0);
    } else if (!(*categories == mean.categories())) {
      throw Error(ErrorCode::kCategoryMismatch, "candidates span different category sets");
    }
    for (std::size_t k = 0; k < mixture.size(); ++k) mixture[k] += weights[b] * mean[k];
  }
  if (!categories) throw Error(ErrorCode::kEmptyCandidateSet, "all weights are zero");
  return EmotionDistribution::from_probabilities(std::move(mixture), *categories);
}

namespace detail {

inline double loglik_score(const Candidate& c, bool per_token) {
  if (per_token && c.token_count > 0) return c.log_likelihood / static_cast<double>(c.token_count);
  return c.log_likelihood;
}

inline double candidate_score(const Candidate& c, ScoreSource source, bool per_token) {
  if (source == ScoreSource::kLogLikelihood) return loglik_score(c, per_token);
  if (!c.verifier_score) throw Error(ErrorCode::kConfigError, "candidate lacks a verifier score");
  return *c.verifier_score;
}

}  // namespace detail

/// Picks the parseable candidate with the highest score; ties go to the
/// lower sample index.
inline AggregationTrace select_best(std::vector<Candidate> candidates, ScoreSource source, bool per_token = false) {
  std::optional<std::size_t> best;
  double best_score = 0.0;
  for (std::size_t b = 0; b < candidates.size(); ++b) {
    if (!candidates[b].parsed) continue;
    double score = detail::candidate_score(candidates[b], source, per_token);
    if (!best || score > best_score || (score == best_score && candidates[b].index < candidates[*best].index)) {
      best = b;
      best_score = score;
    }
  }
  if (!best) throw Error(ErrorCode::kAllCandidatesUnparseable, "no candidate could be parsed");
  std::vector<double> weights(candidates.size(), 0.0);
  weights[*best] = 1.0;
  auto final_distribution = *candidates[*best].parsed;
  int selected = candidates[*best].index;
  return AggregationTrace{std::move(candidates), std::move(weights), selected, std::move(final_distribution)};
}

/// Drops unparseable candidates, weights the survivors and returns the
/// mixture mean.
inline AggregationTrace weighted_aggregate(std::vector<Candidate> candidates, const StrategyConfig& config) {
  std::vector<double> scores(candidates.size(), -std::numeric_limits<double>::infinity());
  bool any = false;
  for (std::size_t b = 0; b < candidates.size(); ++b) {
    if (!candidates[b].parsed) continue;
    scores[b] = detail::candidate_score(candidates[b], config.weight_source, config.per_token_loglik);
    any = true;
  }
  if (!any) throw Error(ErrorCode::kAllCandidatesUnparseable, "no candidate could be parsed");
  auto weights = config.weight_transform == WeightTransform::kSoftmax ? softmax_weights(scores)
                                                                        : direct_normalized_weights(scores);
  auto final_distribution = aggregate_dmm(candidates, weights, config.tau);
  return AggregationTrace{std::move(candidates), std::move(weights), std::nullopt, std::move(final_distribution)};
}

// ---------------------------------------------------------------------------
// Strategy execution

struct CandidateQuery {
  const AnnotatedUtterance& utterance;
  const CategorySet& categories;
  const StrategyConfig& strategy;
  std::string_view prompt;
};

/// Where candidates and verifier scores come from: a live backend, a cache,
/// or both.
class CandidateProvider {
 public:
  virtual ~CandidateProvider() = default;

  /// Exactly strategy.num_candidates candidates, ordered by descending
  /// log-likelihood.
  virtual std::vector<Candidate> candidates(const CandidateQuery& query) = 0;

  virtual VerifierOutcome verifier_score(const CandidateQuery& query, const Candidate& candidate,
                                         std::string_view verifier_prompt) = 0;
};

/// Calls backends directly, no caching.
class LiveCandidateProvider final : public CandidateProvider {
 public:
  LiveCandidateProvider(Backend& generator, BackendConfig generator_config, Backend* verifier)
      : generator_(generator), config_(std::move(generator_config)), verifier_(verifier) {}

  std::vector<Candidate> candidates(const CandidateQuery& query) override {
    BackendConfig config = config_;
    config.num_candidates = query.strategy.num_candidates;
    CategoryMatcher matcher(query.categories);
    return generate_candidates(generator_, query.utterance, query.categories, query.prompt, config, matcher);
  }

  VerifierOutcome verifier_score(const CandidateQuery& query, const Candidate& candidate,
                                 std::string_view verifier_prompt) override {
    if (!verifier_) throw Error(ErrorCode::kConfigError, "strategy needs a verifier backend");
    return score_with_verifier(*verifier_, {query.utterance, query.categories, verifier_prompt, candidate});
  }

 private:
  Backend& generator_;
  BackendConfig config_;
  Backend* verifier_;
};

struct PromptContext {
  const PromptBook& book;
  PromptVariant variant = PromptVariant::kUtterance;
};

/// Runs one test-time-scaling strategy for one utterance.
inline AggregationTrace run_strategy(const AnnotatedUtterance& utterance, const CategorySet& categories,
                                     const StrategyConfig& config, CandidateProvider& provider,
                                     const PromptContext& prompts) {
  config.validate();
  const std::string prompt =
      build_prediction_prompt(utterance, categories, config.prompt_kind(), prompts.variant, prompts.book);
  CandidateQuery query{utterance, categories, config, prompt};
  auto candidates = provider.candidates(query);
  if (candidates.size() != static_cast<std::size_t>(config.num_candidates)) {
    throw Error(ErrorCode::kTransportError, "expected " + std::to_string(config.num_candidates) + " candidates");
  }

  switch (config.strategy) {
    case Strategy::kBaseline:
    case Strategy::kCot: {
      if (!candidates.front().parsed) {
        throw Error(ErrorCode::kAllCandidatesUnparseable, "the single candidate could not be parsed");
      }
      auto final_distribution = *candidates.front().parsed;
      return AggregationTrace{std::move(candidates), {1.0}, std::nullopt, std::move(final_distribution)};
    }
    case Strategy::kBestOfN:
      return select_best(std::move(candidates), ScoreSource::kLogLikelihood, config.per_token_loglik);
    case Strategy::kWeightedBestOfN:
    case Strategy::kVerifier:
    case Strategy::kWeightedVerifier: break;
  }

  bool scored = needs_verifier(config.strategy) || config.weight_source == ScoreSource::kVerifier;
  if (scored) {
    for (auto& c : candidates) {
      if (!c.parsed) continue;
      auto verifier_prompt = build_verifier_prompt(utterance, c.raw_text, categories, prompts.variant, prompts.book);
      auto outcome = provider.verifier_score(query, c, verifier_prompt);
      c.verifier_score = outcome.score;
      c.verifier_fallback = outcome.fallback;
    }
  }
  if (config.strategy == Strategy::kVerifier) return select_best(std::move(candidates), ScoreSource::kVerifier);
  StrategyConfig weighting = config;
  if (config.strategy == Strategy::kWeightedVerifier) weighting.weight_source = ScoreSource::kVerifier;
  return weighted_aggregate(std::move(candidates), weighting);
}

}  // namespace emobench
