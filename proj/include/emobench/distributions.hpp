#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "emobench/error.hpp"

namespace emobench {

/// Absolute tolerance used for every simplex check.
inline constexpr double kSimplexTolerance = 1e-9;

/// Ordered, immutable set of emotion category labels. Copies share storage,
/// so index i maps to the same name for every holder.
class CategorySet {
 public:
  explicit CategorySet(std::vector<std::string> names)
      : names_(std::make_shared<const std::vector<std::string>>(std::move(names))) {
    if (names_->size() < 2) {
      throw Error(ErrorCode::kInvalidCategories, "a category set needs at least two names");
    }
    std::unordered_set<std::string> seen;
    for (const auto& name : *names_) {
      if (name.empty()) throw Error(ErrorCode::kInvalidCategories, "empty category name");
      if (!seen.insert(name).second) {
        throw Error(ErrorCode::kInvalidCategories, "duplicate category name '" + name + "'");
      }
    }
  }

  std::size_t size() const noexcept { return names_->size(); }
  const std::vector<std::string>& names() const noexcept { return *names_; }
  const std::string& name(std::size_t index) const { return names_->at(index); }

  /// Exact (case-sensitive) lookup.
  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names_->size(); ++i) {
      if ((*names_)[i] == name) return i;
    }
    return std::nullopt;
  }

  friend bool operator==(const CategorySet& a, const CategorySet& b) {
    return a.names_ == b.names_ || *a.names_ == *b.names_;
  }

 private:
  std::shared_ptr<const std::vector<std::string>> names_;
};

/// A probability vector over a CategorySet. Only constructible through
/// normalize() or from_probabilities(), both of which enforce the simplex.
class EmotionDistribution {
 public:
  const CategorySet& categories() const noexcept { return categories_; }
  const std::vector<double>& probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }

  /// Wraps an already-normalized vector; throws if it is off the simplex.
  static EmotionDistribution from_probabilities(std::vector<double> probs, CategorySet categories) {
    if (probs.size() != categories.size()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "expected " + std::to_string(categories.size()) + " components, got " +
                      std::to_string(probs.size()));
    }
    double sum = 0.0;
    for (double p : probs) {
      if (!std::isfinite(p)) throw Error(ErrorCode::kNonFinite, "non-finite probability");
      if (p < 0.0) throw Error(ErrorCode::kNegativeComponent, "negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kSimplexTolerance) {
      throw Error(ErrorCode::kZeroMass, "probabilities sum to " + std::to_string(sum));
    }
    return EmotionDistribution(std::move(probs), std::move(categories));
  }

  friend bool operator==(const EmotionDistribution& a, const EmotionDistribution& b) {
    return a.categories_ == b.categories_ && a.probs_ == b.probs_;
  }

 private:
  friend EmotionDistribution normalize(std::span<const double>, const CategorySet&);

  EmotionDistribution(std::vector<double> probs, CategorySet categories)
      : categories_(std::move(categories)), probs_(std::move(probs)) {}

  CategorySet categories_;
  std::vector<double> probs_;
};

/// Divides a non-negative vector by its sum.
inline EmotionDistribution normalize(std::span<const double> raw, const CategorySet& categories) {
  if (raw.size() != categories.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "expected " + std::to_string(categories.size()) + " components, got " +
                    std::to_string(raw.size()));
  }
  double sum = 0.0;
  for (double x : raw) {
    if (std::isnan(x)) throw Error(ErrorCode::kNonFinite, "NaN component");
    if (x < 0.0) throw Error(ErrorCode::kNegativeComponent, "component " + std::to_string(x));
    if (std::isinf(x)) throw Error(ErrorCode::kNonFinite, "infinite component");
    sum += x;
  }
  if (!(sum > kSimplexTolerance)) throw Error(ErrorCode::kZeroMass, "total mass is zero");
  std::vector<double> probs(raw.begin(), raw.end());
  for (double& p : probs) p /= sum;
  return EmotionDistribution(std::move(probs), categories);
}

inline EmotionDistribution normalize(const std::vector<double>& raw, const CategorySet& categories) {
  return normalize(std::span<const double>(raw), categories);
}

/// Shannon entropy in bits, with 0 log 0 = 0.
inline double entropy(const EmotionDistribution& p) {
  double h = 0.0;
  for (double x : p.probs()) {
    if (x > 0.0) h -= x * std::log2(x);
  }
  return std::clamp(h, 0.0, std::log2(static_cast<double>(p.size())));
}

/// Index of the largest probability; ties go to the lowest index.
inline std::size_t dominant_index(const EmotionDistribution& p) {
  const auto& v = p.probs();
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

inline EmotionDistribution one_hot(std::size_t index, const CategorySet& categories) {
  std::vector<double> raw(categories.size(), 0.0);
  raw.at(index) = 1.0;
  return normalize(raw, categories);
}

inline EmotionDistribution uniform(const CategorySet& categories) {
  return normalize(std::vector<double>(categories.size(), 1.0), categories);
}

}  // namespace emobench
