#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "emobench/backends.hpp"
#include "emobench/harness/cache.hpp"
#include "emobench/harness/config.hpp"
#include "emobench/harness/report.hpp"
#include "emobench/labels.hpp"
#include "emobench/metrics.hpp"
#include "emobench/parsing.hpp"
#include "emobench/tts.hpp"

namespace emobench {

/// Command-line overrides applied on top of the config file.
struct RunOptions {
  std::vector<std::string> strategies;
  std::optional<std::string> dataset;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<BinMode> bin_mode;
};

/// Applies overrides, then validates. Throws ConfigError before any
/// backend is constructed.
inline void apply_options(RunConfig& config, const RunOptions& options) {
  if (!options.strategies.empty()) {
    std::vector<StrategyConfig> selected;
    for (const auto& name : options.strategies) {
      Strategy s = parse_strategy(name);
      auto it = std::find_if(config.strategies.begin(), config.strategies.end(),
                             [&](const StrategyConfig& c) { return c.strategy == s; });
      selected.push_back(it != config.strategies.end() ? *it : StrategyConfig::defaults(s));
    }
    config.strategies = std::move(selected);
  }
  if (options.dataset) config.datasets = {config.dataset(*options.dataset)};
  if (options.seed) config.seed = *options.seed;
  if (options.jobs) config.jobs = *options.jobs;
  if (options.bin_mode) config.bin_mode = *options.bin_mode;
  config.validate();
  apply_seed(config);
}

/// Runs fn(0..n-1) on up to `jobs` threads. The first exception is
/// rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n && !stop; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          stop = true;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// generate

struct GenerateStats {
  std::size_t utterances = 0;
  std::size_t tasks = 0;
  std::size_t failures = 0;
  std::size_t unparseable = 0;
  std::size_t records_written = 0;
  GenerationStats requests;
};

namespace detail {

inline bool is_invalid_output(ErrorCode code) {
  return code == ErrorCode::kAllCandidatesUnparseable || code == ErrorCode::kNoFiniteScores;
}

inline nlohmann::json failure_record(const std::string& dataset, const std::string& utterance_id, Strategy strategy,
                                     const Error& e) {
  return {{"dataset", dataset},
          {"utterance_id", utterance_id},
          {"strategy", to_string(strategy)},
          {"code", to_string(e.code())},
          {"message", e.what()}};
}

struct GenerateTaskResult {
  std::vector<CacheRecord> records;
  std::vector<nlohmann::json> failures;
  std::size_t unparseable = 0;
  GenerationStats stats;
};

inline GenerateTaskResult generate_for_utterance(const RunConfig& config, const DatasetConfig& dataset,
                                                 const LabeledExample& example, const CandidateCache& cache,
                                                 Backend& generator, Backend* verifier,
                                                 const std::function<std::string()>& clock) {
  GenerateTaskResult result;
  const auto& utterance = example.utterance;
  if (config.check_audio && !std::filesystem::exists(utterance.audio_path)) {
    Error missing(ErrorCode::kAudioReadError, "audio file not found: " + utterance.audio_path.string());
    for (const auto& s : config.strategies) {
      result.failures.push_back(failure_record(dataset.id, utterance.utterance_id, s.strategy, missing));
    }
    return result;
  }
  CachingCandidateProvider provider(cache, generator, config.generator, verifier, clock);
  PromptContext prompts{dataset.prompts, dataset.variant};
  for (const auto& s : config.strategies) {
    try {
      run_strategy(utterance, dataset.categories, s, provider, prompts);
    } catch (const Error& e) {
      if (is_invalid_output(e.code())) {
        ++result.unparseable;
      } else {
        result.failures.push_back(failure_record(dataset.id, utterance.utterance_id, s.strategy, e));
      }
    }
  }
  result.records = provider.take_pending();
  result.stats = provider.stats();
  return result;
}

}  // namespace detail

/// Fills the candidate cache for every utterance and strategy. Work fans
/// out over `config.jobs` threads; results are committed in manifest order
/// by a single writer so the cache bytes do not depend on scheduling.
inline GenerateStats cmd_generate(const RunConfig& config, std::ostream& log) {
  config.validate();
  auto generator = make_backend(config.generator);
  std::unique_ptr<Backend> verifier = config.verifier ? make_backend(*config.verifier) : nullptr;
  CandidateCache cache(config.cache_dir);
  const auto clock = make_clock(config.deterministic_timestamps);

  GenerateStats total;
  for (const auto& dataset : config.datasets) {
    auto manifest = load_manifest(dataset.manifest, dataset.categories);
    log << "[" << dataset.id << "] " << manifest.examples.size() << " utterances, " << manifest.stats.rejected()
        << " manifest rows rejected\n";
    const std::size_t n = manifest.examples.size();
    std::vector<std::optional<detail::GenerateTaskResult>> slots(n);
    std::size_t next_commit = 0;
    std::mutex commit_mutex;

    parallel_for(n, config.jobs, [&](std::size_t i) {
      auto result = detail::generate_for_utterance(config, dataset, manifest.examples[i], cache, *generator,
                                                   verifier.get(), clock);
      std::lock_guard lock(commit_mutex);
      slots[i] = std::move(result);
      while (next_commit < n && slots[next_commit]) {
        auto& r = *slots[next_commit];
        total.records_written += cache.append(r.records);
        for (const auto& f : r.failures) cache.append_failure(f);
        total.failures += r.failures.size();
        total.unparseable += r.unparseable;
        total.requests += r.stats;
        slots[next_commit].reset();
        ++next_commit;
        if (next_commit % 100 == 0 || next_commit == n) {
          log << "[" << dataset.id << "] " << next_commit << "/" << n << " utterances done\n";
        }
      }
    });
    total.utterances += n;
    total.tasks += n * config.strategies.size();
  }
  log << "generate: " << total.requests.generate_requests << " generation requests, "
      << total.requests.verifier_requests << " verifier requests, "
      << total.requests.candidate_hits + total.requests.verifier_hits << " cache hits, " << total.failures
      << " failures, " << total.unparseable << " unparseable\n";
  return total;
}

// ---------------------------------------------------------------------------
// evaluate

namespace detail {

struct EvaluatedRow {
  UtteranceRow row;
  std::vector<std::string> missing;
};

inline EvaluatedRow evaluate_utterance(const RunConfig& config, const DatasetConfig& dataset,
                                       const LabeledExample& example, const StrategyConfig& strategy,
                                       const EntropyBinning& binning, const CandidateCache& cache,
                                       const std::set<std::pair<std::string, std::string>>& failures) {
  EvaluatedRow out;
  auto& row = out.row;
  row.utterance_id = example.utterance.utterance_id;
  row.entropy_bits = example.entropy_bits;
  row.bin = assign_bin(example, binning);

  std::optional<std::string> verifier_model;
  if (config.verifier) verifier_model = config.verifier->model_name;
  CachedCandidateProvider provider(cache, config.generator.model_name, config.generator.sampling_temperature,
                                   verifier_model);
  try {
    auto trace = run_strategy(example.utterance, dataset.categories, strategy, provider,
                              PromptContext{dataset.prompts, dataset.variant});
    row.selected_index = trace.selected_index;
    row.result = score_utterance(row.utterance_id, example.soft_label, std::move(trace.final_distribution), row.bin);
    row.status = status::kOk;
  } catch (const Error& e) {
    if (failures.count({row.utterance_id, std::string(to_string(strategy.strategy))})) {
      row.status = status::kGenerationFailed;
    } else if (is_invalid_output(e.code())) {
      row.status = status::kUnparseable;
    } else if (e.code() == ErrorCode::kMissingCandidates) {
      out.missing = provider.missing_keys();
    } else {
      row.status = to_string(e.code());
    }
  }
  return out;
}

}  // namespace detail

/// Scores every strategy from cached candidates only; no backend is built.
/// Throws MissingCandidates listing each absent key when the cache does
/// not cover the request.
inline EvaluationReport evaluate(const RunConfig& config, std::ostream& log) {
  config.validate();
  CandidateCache cache(config.cache_dir, /*repair=*/false);
  const auto failures = cache.failures();

  EvaluationReport report;
  std::vector<std::string> missing;
  for (const auto& dataset : config.datasets) {
    auto manifest = load_manifest(dataset.manifest, dataset.categories);
    const std::size_t n = manifest.examples.size();
    DatasetEvaluation de;
    de.id = dataset.id;
    de.num_classes = dataset.categories.size();
    de.manifest = manifest.stats;
    de.binning = fit_binning(std::span<const LabeledExample>(manifest.examples), config.bin_mode);

    std::vector<bool> valid_everywhere(n, true);
    for (const auto& strategy : config.strategies) {
      std::vector<detail::EvaluatedRow> rows(n);
      parallel_for(n, config.jobs, [&](std::size_t i) {
        rows[i] = detail::evaluate_utterance(config, dataset, manifest.examples[i], strategy, de.binning, cache,
                                             failures);
      });
      StrategyEvaluation se;
      se.config = strategy;
      se.model = config.generator.model_name;
      std::vector<UtteranceResult> results;
      for (std::size_t i = 0; i < n; ++i) {
        missing.insert(missing.end(), rows[i].missing.begin(), rows[i].missing.end());
        if (rows[i].row.result) results.push_back(*rows[i].row.result);
        else valid_everywhere[i] = false;
        se.rows.push_back(std::move(rows[i].row));
      }
      se.full = aggregate(dataset.id, se.model, std::string(to_string(strategy.strategy)), results, n,
                          de.num_classes);
      de.strategies.push_back(std::move(se));
    }

    de.intersection_size = static_cast<std::size_t>(std::count(valid_everywhere.begin(), valid_everywhere.end(), true));
    for (auto& se : de.strategies) {
      std::vector<UtteranceResult> shared;
      for (std::size_t i = 0; i < n; ++i) {
        if (valid_everywhere[i]) shared.push_back(*se.rows[i].result);
      }
      se.intersection = aggregate(dataset.id, se.model, std::string(to_string(se.config.strategy)), shared,
                                  de.intersection_size, de.num_classes);
    }
    log << "[" << dataset.id << "] evaluated " << n << " utterances x " << config.strategies.size()
        << " strategies, " << de.intersection_size << " valid under all\n";
    report.datasets.push_back(std::move(de));
  }

  if (!missing.empty()) {
    std::string message = std::to_string(missing.size()) + " candidate(s) missing from the cache; run generate first:";
    for (const auto& key : missing) message += "\n  " + key;
    throw Error(ErrorCode::kMissingCandidates, message);
  }
  return report;
}

/// evaluate() plus atomic report emission into config.output_dir.
inline EvaluationReport cmd_evaluate(const RunConfig& config, std::ostream& log) {
  auto report = evaluate(config, log);
  write_reports(config.output_dir, report);
  log << "reports written to " << config.output_dir.string() << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// report

/// Prints the stored summary as a table, relative changes in brackets.
inline void cmd_report(const std::filesystem::path& output_dir, std::ostream& out,
                       const std::optional<std::string>& dataset_filter = std::nullopt,
                       const std::vector<std::string>& strategy_filter = {}) {
  const auto path = output_dir / "summary.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "no summary at " + path.string() + "; run evaluate first");
  auto summary = nlohmann::json::parse(in, nullptr, false);
  if (summary.is_discarded()) throw Error(ErrorCode::kIoError, path.string() + " is not valid JSON");

  auto cell = [](const nlohmann::json& value, const nlohmann::json* change) {
    std::string text = value.is_number() ? detail::fixed6(value.get<double>()) : "n/a";
    if (change && change->is_number()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, " (%+.1f%%)", 100.0 * change->get<double>());
      text += buf;
    }
    return text;
  };

  for (const auto& d : summary.at("datasets")) {
    const auto id = d.at("id").get<std::string>();
    if (dataset_filter && *dataset_filter != id) continue;
    out << "dataset " << id << " (" << d.at("manifest").at("accepted").get<std::size_t>() << " utterances, "
        << d.at("intersection_size").get<std::size_t>() << " valid under every strategy)\n";
    char header[160];
    std::snprintf(header, sizeof header, "  %-9s %-22s %-22s %-22s %-22s %-22s %s\n", "strategy", "js", "bc", "r2",
                  "accuracy", "macro_f1", "valid_rate");
    out << header;
    for (const auto& s : d.at("strategies")) {
      const auto name = s.at("strategy").get<std::string>();
      if (!strategy_filter.empty() &&
          std::find(strategy_filter.begin(), strategy_filter.end(), name) == strategy_filter.end()) {
        continue;
      }
      const auto& full = s.at("full");
      const nlohmann::json* changes = s.contains("relative_change") ? &s["relative_change"] : nullptr;
      auto change_of = [&](const char* metric) { return changes ? &changes->at(metric) : nullptr; };
      char line[256];
      std::snprintf(line, sizeof line, "  %-9s %-22s %-22s %-22s %-22s %-22s %s\n", name.c_str(),
                    cell(full.at("js"), change_of("js")).c_str(), cell(full.at("bc"), change_of("bc")).c_str(),
                    cell(full.at("r2"), change_of("r2")).c_str(),
                    cell(full.at("accuracy"), change_of("accuracy")).c_str(),
                    cell(full.at("macro_f1"), change_of("macro_f1")).c_str(),
                    cell(full.at("valid_rate"), change_of("valid_rate")).c_str());
      out << line;
    }
  }
}

// ---------------------------------------------------------------------------
// parse-test

struct ParseTestSummary {
  std::size_t total = 0;
  std::size_t valid = 0;

  std::optional<double> valid_rate() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(valid) / static_cast<double>(total);
  }
};

/// Feeds each non-blank line through the parsing cascade and prints one
/// row per line plus the valid rate.
inline ParseTestSummary cmd_parse_test(std::istream& in, const CategorySet& categories, std::ostream& out) {
  CategoryMatcher matcher(categories);
  ParseTestSummary summary;
  out << "line\tstrategy\tdistribution\n";
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    auto outcome = parse_output(line, matcher);
    ++summary.total;
    std::string vector = "-";
    if (outcome.distribution) {
      ++summary.valid;
      vector = "[";
      for (std::size_t k = 0; k < outcome.distribution->size(); ++k) {
        if (k) vector += ", ";
        vector += categories.name(k) + "=" + detail::fixed6((*outcome.distribution)[k]);
      }
      vector += "]";
    }
    out << line_no << '\t' << to_string(outcome.strategy_used) << '\t' << vector << '\n';
  }
  auto rate = summary.valid_rate();
  out << "valid rate: " << (rate ? detail::fixed6(*rate) : std::string("n/a")) << " (" << summary.valid << "/"
      << summary.total << ")\n";
  return summary;
}

inline ParseTestSummary cmd_parse_test(const std::filesystem::path& path, const CategorySet& categories,
                                       std::ostream& out) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  return cmd_parse_test(in, categories, out);
}

}  // namespace emobench
