#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "emobench/distributions.hpp"
#include "emobench/error.hpp"

namespace emobench {

struct AnnotatedUtterance {
  std::string utterance_id;
  std::filesystem::path audio_path;
  std::optional<std::string> transcript;
  /// One inner list per rater; raters may give several labels.
  std::vector<std::vector<std::string>> rater_labels;
  std::string dataset_id;
};

struct LabeledExample {
  AnnotatedUtterance utterance;
  EmotionDistribution soft_label;
  double entropy_bits;
  std::size_t majority_index;
};

/// Normalized label counts over all raters, multi-label annotations
/// flattened. Labels outside the category set are skipped.
inline EmotionDistribution build_soft_label(const AnnotatedUtterance& utterance,
                                            const CategorySet& categories) {
  std::vector<double> counts(categories.size(), 0.0);
  double total = 0.0;
  for (const auto& rater : utterance.rater_labels) {
    for (const auto& label : rater) {
      if (auto index = categories.index_of(label)) {
        counts[*index] += 1.0;
        total += 1.0;
      }
    }
  }
  if (total == 0.0) {
    throw Error(ErrorCode::kEmptyAnnotations, "utterance '" + utterance.utterance_id + "' has no usable labels");
  }
  return normalize(counts, categories);
}

inline std::size_t majority_vote(const AnnotatedUtterance& utterance, const CategorySet& categories) {
  return dominant_index(build_soft_label(utterance, categories));
}

inline LabeledExample make_labeled_example(AnnotatedUtterance utterance, const CategorySet& categories) {
  auto soft = build_soft_label(utterance, categories);
  double h = entropy(soft);
  std::size_t majority = dominant_index(soft);
  return LabeledExample{std::move(utterance), std::move(soft), h, majority};
}

// ---------------------------------------------------------------------------
// Manifest ingestion

/// Why a manifest line was not turned into an utterance.
enum class RowRejection { kMalformed, kUnknownLabel, kNoLabels, kDuplicateId };

struct ManifestStats {
  std::size_t accepted = 0;
  std::size_t malformed = 0;
  std::size_t unknown_label = 0;
  std::size_t no_labels = 0;
  std::size_t duplicate_id = 0;

  std::size_t rejected() const { return malformed + unknown_label + no_labels + duplicate_id; }
};

/// Streams a newline-delimited JSON manifest, one utterance per line.
/// Rows carrying any label outside the category set are dropped whole.
class ManifestReader {
 public:
  ManifestReader(std::istream& in, CategorySet categories, std::filesystem::path base_dir = {})
      : in_(in), categories_(std::move(categories)), base_dir_(std::move(base_dir)) {}

  /// Next accepted utterance, or nullopt at end of input.
  std::optional<AnnotatedUtterance> next() {
    std::string line;
    while (std::getline(in_, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      auto utterance = parse_row(line);
      if (utterance) {
        ++stats_.accepted;
        return utterance;
      }
    }
    return std::nullopt;
  }

  const ManifestStats& stats() const noexcept { return stats_; }

 private:
  std::optional<AnnotatedUtterance> parse_row(const std::string& line) {
    nlohmann::json row = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (row.is_discarded() || !row.is_object()) return reject(RowRejection::kMalformed);

    AnnotatedUtterance u;
    try {
      u.utterance_id = row.at("utterance_id").get<std::string>();
      u.audio_path = row.at("audio_path").get<std::string>();
      if (auto it = row.find("transcript"); it != row.end() && !it->is_null()) {
        u.transcript = it->get<std::string>();
      }
      u.rater_labels = row.at("labels").get<std::vector<std::vector<std::string>>>();
      if (auto it = row.find("dataset"); it != row.end() && !it->is_null()) {
        u.dataset_id = it->get<std::string>();
      }
    } catch (const nlohmann::json::exception&) {
      return reject(RowRejection::kMalformed);
    }
    if (u.utterance_id.empty()) return reject(RowRejection::kMalformed);
    if (!base_dir_.empty() && u.audio_path.is_relative()) u.audio_path = base_dir_ / u.audio_path;

    bool any_label = false;
    for (const auto& rater : u.rater_labels) {
      for (const auto& label : rater) {
        if (!categories_.index_of(label)) return reject(RowRejection::kUnknownLabel);
        any_label = true;
      }
    }
    if (!any_label) return reject(RowRejection::kNoLabels);
    if (!seen_ids_.insert(u.utterance_id).second) return reject(RowRejection::kDuplicateId);
    return u;
  }

  std::nullopt_t reject(RowRejection why) {
    switch (why) {
      case RowRejection::kMalformed: ++stats_.malformed; break;
      case RowRejection::kUnknownLabel: ++stats_.unknown_label; break;
      case RowRejection::kNoLabels: ++stats_.no_labels; break;
      case RowRejection::kDuplicateId: ++stats_.duplicate_id; break;
    }
    return std::nullopt;
  }

  std::istream& in_;
  CategorySet categories_;
  std::filesystem::path base_dir_;
  std::unordered_set<std::string> seen_ids_;
  ManifestStats stats_;
};

struct Manifest {
  std::vector<LabeledExample> examples;
  ManifestStats stats;
};

/// Reads a whole manifest file. Relative audio paths resolve against the
/// manifest's directory.
inline Manifest load_manifest(const std::filesystem::path& path, const CategorySet& categories) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open manifest " + path.string());
  ManifestReader reader(in, categories, path.parent_path());
  Manifest manifest;
  while (auto u = reader.next()) {
    manifest.examples.push_back(make_labeled_example(std::move(*u), categories));
  }
  manifest.stats = reader.stats();
  return manifest;
}

inline nlohmann::json to_manifest_row(const AnnotatedUtterance& u) {
  nlohmann::json row{{"utterance_id", u.utterance_id},
                     {"audio_path", u.audio_path.generic_string()},
                     {"labels", u.rater_labels},
                     {"dataset", u.dataset_id}};
  if (u.transcript) row["transcript"] = *u.transcript;
  return row;
}

// ---------------------------------------------------------------------------
// Entropy binning

inline constexpr std::size_t kNumBins = 5;

enum class BinMode { kQuantile, kEqualWidth };

inline std::string_view to_string(BinMode mode) {
  return mode == BinMode::kQuantile ? "quantile" : "equal-width";
}

inline BinMode parse_bin_mode(std::string_view text) {
  if (text == "quantile") return BinMode::kQuantile;
  if (text == "equal-width") return BinMode::kEqualWidth;
  throw Error(ErrorCode::kConfigError, "unknown bin mode '" + std::string(text) + "'");
}

/// Four interior cut points splitting entropy into five ambiguity levels.
/// Bin i holds values v with boundaries[i-1] < v <= boundaries[i].
struct EntropyBinning {
  std::array<double, kNumBins - 1> boundaries{};
  BinMode mode = BinMode::kQuantile;
};

inline EntropyBinning fit_binning(std::span<const double> entropies, BinMode mode) {
  if (entropies.size() < kNumBins) {
    throw Error(ErrorCode::kTooFewExamples,
                "binning needs at least 5 examples, got " + std::to_string(entropies.size()));
  }
  std::vector<double> sorted(entropies.begin(), entropies.end());
  std::sort(sorted.begin(), sorted.end());
  EntropyBinning binning;
  binning.mode = mode;
  const std::size_t n = sorted.size();
  for (std::size_t i = 1; i < kNumBins; ++i) {
    if (mode == BinMode::kQuantile) {
      // Smallest order statistic with at least i*n/5 values at or below it.
      std::size_t rank = (i * n + kNumBins - 1) / kNumBins;
      binning.boundaries[i - 1] = sorted[rank - 1];
    } else {
      double lo = sorted.front();
      double hi = sorted.back();
      binning.boundaries[i - 1] = lo + (hi - lo) * static_cast<double>(i) / kNumBins;
    }
  }
  return binning;
}

inline EntropyBinning fit_binning(std::span<const LabeledExample> examples, BinMode mode) {
  std::vector<double> entropies;
  entropies.reserve(examples.size());
  for (const auto& e : examples) entropies.push_back(e.entropy_bits);
  return fit_binning(std::span<const double>(entropies), mode);
}

inline std::size_t assign_bin(double entropy_bits, const EntropyBinning& binning) {
  for (std::size_t i = 0; i < binning.boundaries.size(); ++i) {
    if (entropy_bits <= binning.boundaries[i]) return i;
  }
  return kNumBins - 1;
}

inline std::size_t assign_bin(const LabeledExample& example, const EntropyBinning& binning) {
  return assign_bin(example.entropy_bits, binning);
}

}  // namespace emobench
