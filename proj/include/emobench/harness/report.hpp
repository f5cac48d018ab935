#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "emobench/error.hpp"
#include "emobench/labels.hpp"
#include "emobench/metrics.hpp"
#include "emobench/tts.hpp"

namespace emobench {

/// Per-utterance status strings used in reports.
namespace status {
inline constexpr std::string_view kOk = "ok";
inline constexpr std::string_view kUnparseable = "unparseable";
inline constexpr std::string_view kGenerationFailed = "generation_failed";
}  // namespace status

struct UtteranceRow {
  std::string utterance_id;
  std::string status;
  std::size_t bin = 0;
  double entropy_bits = 0.0;
  std::optional<UtteranceResult> result;
  std::optional<int> selected_index;
};

struct StrategyEvaluation {
  StrategyConfig config;
  std::string model;
  std::vector<UtteranceRow> rows;
  AggregateReport full;
  AggregateReport intersection;
};

struct DatasetEvaluation {
  std::string id;
  std::size_t num_classes = 0;
  ManifestStats manifest;
  EntropyBinning binning;
  std::size_t intersection_size = 0;
  std::vector<StrategyEvaluation> strategies;
};

struct EvaluationReport {
  std::vector<DatasetEvaluation> datasets;
};

inline constexpr std::string_view kReportMetrics[] = {"js", "bc", "r2", "accuracy", "macro_f1", "valid_rate"};
inline constexpr std::string_view kBinMetrics[] = {"js", "bc", "r2"};

inline std::optional<double> metric_value(const AggregateReport& r, std::string_view metric) {
  if (metric == "js") return r.mean_js;
  if (metric == "bc") return r.mean_bc;
  if (metric == "r2") return r.r2;
  if (metric == "accuracy") return r.accuracy;
  if (metric == "macro_f1") return r.macro_f1;
  if (metric == "valid_rate") return r.valid_rate;
  throw Error(ErrorCode::kConfigError, "unknown metric '" + std::string(metric) + "'");
}

inline std::optional<double> bin_metric_value(const BinSummary& b, std::string_view metric) {
  if (metric == "js") return b.median_js;
  if (metric == "bc") return b.median_bc;
  if (metric == "r2") return b.median_r2;
  throw Error(ErrorCode::kConfigError, "unknown bin metric '" + std::string(metric) + "'");
}

/// Relative change against the baseline, signed so that positive always
/// means better: (old - new) / old for JS, (new - old) / old otherwise.
inline std::optional<double> relative_change(std::string_view metric, double value, double baseline) {
  if (baseline == 0.0) return std::nullopt;
  if (metric == "js") return (baseline - value) / baseline;
  return (value - baseline) / baseline;
}

namespace detail {

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s.erase(0, 1);
  return s;
}

inline std::string fixed6(const std::optional<double>& v) { return v ? fixed6(*v) : std::string(); }

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline const StrategyEvaluation* baseline_of(const DatasetEvaluation& d) {
  for (const auto& s : d.strategies) {
    if (s.config.strategy == Strategy::kBaseline) return &s;
  }
  return nullptr;
}

inline nlohmann::ordered_json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

inline std::string aggregate_csv(const EvaluationReport& report, bool intersection) {
  std::ostringstream out;
  out << "model,strategy,dataset,metric,value,relative_change\n";
  for (const auto& d : report.datasets) {
    const auto* base = detail::baseline_of(d);
    for (const auto& s : d.strategies) {
      const auto& agg = intersection ? s.intersection : s.full;
      for (auto metric : kReportMetrics) {
        auto value = metric_value(agg, metric);
        std::optional<double> change;
        if (base && &s != base && value) {
          if (auto old = metric_value(intersection ? base->intersection : base->full, metric)) {
            change = relative_change(metric, *value, *old);
          }
        }
        out << detail::csv_field(s.model) << ',' << to_string(s.config.strategy) << ',' << detail::csv_field(d.id)
            << ',' << metric << ',' << detail::fixed6(value) << ',' << detail::fixed6(change) << '\n';
      }
    }
  }
  return out.str();
}

inline std::string per_bin_csv(const EvaluationReport& report) {
  std::ostringstream out;
  out << "model,strategy,dataset,bin,metric,median,count\n";
  for (const auto& d : report.datasets) {
    for (const auto& s : d.strategies) {
      for (std::size_t b = 0; b < kNumBins; ++b) {
        for (auto metric : kBinMetrics) {
          out << detail::csv_field(s.model) << ',' << to_string(s.config.strategy) << ','
              << detail::csv_field(d.id) << ',' << b << ',' << metric << ','
              << detail::fixed6(bin_metric_value(s.full.per_bin[b], metric)) << ',' << s.full.per_bin[b].count
              << '\n';
        }
      }
    }
  }
  return out.str();
}

/// One line per (dataset, strategy, utterance), valid or not.
inline std::string utterances_csv(const EvaluationReport& report) {
  std::ostringstream out;
  out << "model,strategy,dataset,utterance_id,status,bin,entropy,js,bc,majority,dominant,prediction\n";
  for (const auto& d : report.datasets) {
    for (const auto& s : d.strategies) {
      for (const auto& row : s.rows) {
        out << detail::csv_field(s.model) << ',' << to_string(s.config.strategy) << ',' << detail::csv_field(d.id)
            << ',' << detail::csv_field(row.utterance_id) << ',' << row.status << ',' << row.bin << ','
            << detail::fixed6(row.entropy_bits) << ',';
        if (row.result) {
          const auto& r = *row.result;
          std::string prediction;
          for (std::size_t k = 0; k < r.prediction.size(); ++k) {
            if (k) prediction += ' ';
            prediction += detail::fixed6(r.prediction[k]);
          }
          out << detail::fixed6(r.js) << ',' << detail::fixed6(r.bc) << ','
              << r.ground_truth.categories().name(r.gt_majority) << ','
              << r.prediction.categories().name(r.pred_dominant) << ',' << prediction;
        } else {
          out << ",,,,";
        }
        out << '\n';
      }
    }
  }
  return out.str();
}

inline nlohmann::ordered_json aggregate_json(const AggregateReport& r) {
  nlohmann::ordered_json j;
  j["total"] = r.total;
  j["valid"] = r.valid;
  j["valid_rate"] = r.valid_rate;
  j["js"] = detail::optional_number(r.mean_js);
  j["bc"] = detail::optional_number(r.mean_bc);
  j["r2"] = detail::optional_number(r.r2);
  j["accuracy"] = detail::optional_number(r.accuracy);
  j["macro_f1"] = detail::optional_number(r.macro_f1);
  return j;
}

/// Structured run summary. Contains no timestamps so reruns compare equal.
inline nlohmann::ordered_json summary_json(const EvaluationReport& report) {
  nlohmann::ordered_json datasets = nlohmann::ordered_json::array();
  for (const auto& d : report.datasets) {
    nlohmann::ordered_json dj;
    dj["id"] = d.id;
    dj["manifest"] = {{"accepted", d.manifest.accepted},
                      {"rejected", d.manifest.rejected()},
                      {"malformed", d.manifest.malformed},
                      {"unknown_label", d.manifest.unknown_label},
                      {"no_labels", d.manifest.no_labels},
                      {"duplicate_id", d.manifest.duplicate_id}};
    dj["binning"] = {{"mode", to_string(d.binning.mode)}, {"boundaries", d.binning.boundaries}};
    dj["intersection_size"] = d.intersection_size;
    const auto* base = detail::baseline_of(d);
    nlohmann::ordered_json strategies = nlohmann::ordered_json::array();
    for (const auto& s : d.strategies) {
      nlohmann::ordered_json sj;
      sj["strategy"] = to_string(s.config.strategy);
      sj["model"] = s.model;
      sj["B"] = s.config.num_candidates;
      std::map<std::string, std::size_t> statuses;
      for (const auto& row : s.rows) ++statuses[row.status];
      sj["status_counts"] = statuses;
      sj["full"] = aggregate_json(s.full);
      sj["intersection"] = aggregate_json(s.intersection);
      if (base && &s != base) {
        nlohmann::ordered_json changes;
        for (auto metric : kReportMetrics) {
          auto value = metric_value(s.full, metric);
          auto old = metric_value(base->full, metric);
          changes[std::string(metric)] =
              detail::optional_number(value && old ? relative_change(metric, *value, *old) : std::nullopt);
        }
        sj["relative_change"] = changes;
      }
      strategies.push_back(std::move(sj));
    }
    dj["strategies"] = std::move(strategies);
    datasets.push_back(std::move(dj));
  }
  return {{"datasets", std::move(datasets)}};
}

/// Writes `content` to a sibling temp file and renames it into place, so
/// readers never observe a partial report.
inline void write_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot move report into " + path.string() + ": " + ec.message());
}

inline const std::vector<std::string>& report_file_names() {
  static const std::vector<std::string> names{"aggregate.csv", "aggregate_intersection.csv", "per_bin.csv",
                                              "utterances.csv", "summary.json"};
  return names;
}

inline void write_reports(const std::filesystem::path& dir, const EvaluationReport& report) {
  // Render everything first so a failure leaves the old files untouched.
  std::vector<std::string> contents{aggregate_csv(report, false), aggregate_csv(report, true), per_bin_csv(report),
                                    utterances_csv(report), summary_json(report).dump(2) + "\n"};
  const auto& names = report_file_names();
  for (std::size_t i = 0; i < names.size(); ++i) write_atomic(dir / names[i], contents[i]);
}

}  // namespace emobench
