#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emobench/distributions.hpp"
#include "emobench/error.hpp"
#include "emobench/labels.hpp"

namespace emobench {

namespace detail {

inline void require_same_categories(const EmotionDistribution& p, const EmotionDistribution& q) {
  if (!(p.categories() == q.categories())) {
    throw Error(ErrorCode::kCategoryMismatch, "distributions are over different category sets");
  }
}

}  // namespace detail

/// Jensen-Shannon divergence with base-2 logs, so the range is [0, 1].
inline double js_divergence(const EmotionDistribution& p, const EmotionDistribution& q) {
  detail::require_same_categories(p, q);
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double m = 0.5 * (p[k] + q[k]);
    const double from_p = p[k] > 0.0 ? p[k] * std::log2(p[k] / m) : 0.0;
    const double from_q = q[k] > 0.0 ? q[k] * std::log2(q[k] / m) : 0.0;
    // One commutative add per class keeps JS(p, q) == JS(q, p) exactly.
    total += 0.5 * (from_p + from_q);
  }
  return std::clamp(total, 0.0, 1.0);
}

/// Bhattacharyya coefficient: sum of sqrt(p_k q_k).
inline double bhattacharyya(const EmotionDistribution& p, const EmotionDistribution& q) {
  detail::require_same_categories(p, q);
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) total += std::sqrt(p[k] * q[k]);
  return std::clamp(total, 0.0, 1.0);
}

using DistributionPair = std::pair<EmotionDistribution, EmotionDistribution>;

/// Coefficient of determination pooled over every (utterance, class) cell,
/// clamped below at zero.
inline double r_squared(std::span<const DistributionPair> pairs) {
  if (pairs.size() < 2) throw Error(ErrorCode::kTooFewExamples, "R^2 needs at least two pairs");
  double mean = 0.0;
  std::size_t cells = 0;
  for (const auto& [truth, pred] : pairs) {
    detail::require_same_categories(truth, pred);
    detail::require_same_categories(truth, pairs.front().first);
    for (double x : truth.probs()) mean += x;
    cells += truth.size();
  }
  mean /= static_cast<double>(cells);
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (const auto& [truth, pred] : pairs) {
    for (std::size_t k = 0; k < truth.size(); ++k) {
      ss_res += (truth[k] - pred[k]) * (truth[k] - pred[k]);
      ss_tot += (truth[k] - mean) * (truth[k] - mean);
    }
  }
  if (ss_tot <= 0.0) throw Error(ErrorCode::kDegenerateVariance, "ground-truth cells have zero variance");
  return std::max(0.0, 1.0 - ss_res / ss_tot);
}

/// R^2 across the K cells of a single utterance; nullopt when the ground
/// truth is uniform (no variance to explain).
inline std::optional<double> utterance_r_squared(const EmotionDistribution& truth, const EmotionDistribution& pred) {
  detail::require_same_categories(truth, pred);
  const double mean = 1.0 / static_cast<double>(truth.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    ss_res += (truth[k] - pred[k]) * (truth[k] - pred[k]);
    ss_tot += (truth[k] - mean) * (truth[k] - mean);
  }
  if (ss_tot <= 1e-15) return std::nullopt;
  return std::max(0.0, 1.0 - ss_res / ss_tot);
}

struct UtteranceResult {
  std::string utterance_id;
  EmotionDistribution ground_truth;
  EmotionDistribution prediction;
  double js = 0.0;
  double bc = 0.0;
  std::size_t bin_index = 0;
  std::size_t gt_majority = 0;
  std::size_t pred_dominant = 0;
};

inline UtteranceResult score_utterance(std::string utterance_id, EmotionDistribution ground_truth,
                                       EmotionDistribution prediction, std::size_t bin_index) {
  double js = js_divergence(ground_truth, prediction);
  double bc = bhattacharyya(ground_truth, prediction);
  std::size_t gt = dominant_index(ground_truth);
  std::size_t pred = dominant_index(prediction);
  return UtteranceResult{std::move(utterance_id), std::move(ground_truth), std::move(prediction),
                         js, bc, bin_index, gt, pred};
}

struct ClassificationScores {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Dominant-emotion accuracy and macro-F1 against the majority vote. Every
/// one of the K classes enters the macro average; a class nobody predicted
/// and nobody labeled scores F1 = 0.
inline ClassificationScores classification_scores(std::span<const UtteranceResult> results, std::size_t num_classes) {
  if (results.empty()) throw Error(ErrorCode::kTooFewExamples, "no results to score");
  std::vector<double> tp(num_classes, 0.0), fp(num_classes, 0.0), fn(num_classes, 0.0);
  std::size_t correct = 0;
  for (const auto& r : results) {
    if (r.gt_majority >= num_classes || r.pred_dominant >= num_classes) {
      throw Error(ErrorCode::kDimensionMismatch, "class index out of range");
    }
    if (r.pred_dominant == r.gt_majority) {
      ++correct;
      tp[r.gt_majority] += 1.0;
    } else {
      fp[r.pred_dominant] += 1.0;
      fn[r.gt_majority] += 1.0;
    }
  }
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    f1_sum += denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
  }
  return {static_cast<double>(correct) / static_cast<double>(results.size()),
          f1_sum / static_cast<double>(num_classes)};
}

/// Median with the mean-of-middle-two rule; nullopt for an empty sample.
inline std::optional<double> median(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct BinSummary {
  std::size_t count = 0;
  std::optional<double> median_js;
  std::optional<double> median_bc;
  /// Median of per-utterance R^2 over utterances whose truth is not uniform.
  std::optional<double> median_r2;
};

inline std::array<BinSummary, kNumBins> bin_medians(std::span<const UtteranceResult> results) {
  std::array<std::vector<double>, kNumBins> js, bc, r2;
  std::array<BinSummary, kNumBins> out{};
  for (const auto& r : results) {
    if (r.bin_index >= kNumBins) throw Error(ErrorCode::kDimensionMismatch, "bin index out of range");
    ++out[r.bin_index].count;
    js[r.bin_index].push_back(r.js);
    bc[r.bin_index].push_back(r.bc);
    if (auto v = utterance_r_squared(r.ground_truth, r.prediction)) r2[r.bin_index].push_back(*v);
  }
  for (std::size_t b = 0; b < kNumBins; ++b) {
    out[b].median_js = median(std::move(js[b]));
    out[b].median_bc = median(std::move(bc[b]));
    out[b].median_r2 = median(std::move(r2[b]));
  }
  return out;
}

struct AggregateReport {
  std::string dataset_id;
  std::string model_name;
  std::string strategy;
  std::size_t total = 0;
  std::size_t valid = 0;
  double valid_rate = 0.0;
  std::optional<double> mean_js;
  std::optional<double> mean_bc;
  std::optional<double> r2;
  std::optional<double> accuracy;
  std::optional<double> macro_f1;
  std::array<BinSummary, kNumBins> per_bin{};
};

/// Summarizes the valid results of one (dataset, model, strategy) run.
/// `total` counts every utterance attempted, valid or not.
inline AggregateReport aggregate(std::string dataset_id, std::string model_name, std::string strategy,
                                 std::span<const UtteranceResult> results, std::size_t total,
                                 std::size_t num_classes) {
  AggregateReport report;
  report.dataset_id = std::move(dataset_id);
  report.model_name = std::move(model_name);
  report.strategy = std::move(strategy);
  report.total = total;
  report.valid = results.size();
  report.valid_rate = total == 0 ? 0.0 : static_cast<double>(results.size()) / static_cast<double>(total);
  report.per_bin = bin_medians(results);
  if (results.empty()) return report;

  double js_sum = 0.0;
  double bc_sum = 0.0;
  std::vector<DistributionPair> pairs;
  pairs.reserve(results.size());
  for (const auto& r : results) {
    js_sum += r.js;
    bc_sum += r.bc;
    pairs.emplace_back(r.ground_truth, r.prediction);
  }
  report.mean_js = js_sum / static_cast<double>(results.size());
  report.mean_bc = bc_sum / static_cast<double>(results.size());
  try {
    report.r2 = r_squared(pairs);
  } catch (const Error&) {
    report.r2.reset();
  }
  auto cls = classification_scores(results, num_classes);
  report.accuracy = cls.accuracy;
  report.macro_f1 = cls.macro_f1;
  return report;
}

}  // namespace emobench
