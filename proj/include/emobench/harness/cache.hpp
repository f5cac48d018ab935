#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "emobench/backends.hpp"
#include "emobench/digest.hpp"
#include "emobench/error.hpp"
#include "emobench/parsing.hpp"
#include "emobench/tts.hpp"

namespace emobench {

enum class RecordKind { kCandidate, kVerifier };

inline std::string_view to_string(RecordKind k) { return k == RecordKind::kVerifier ? "verifier" : "candidate"; }

struct CacheRecord {
  std::string key;
  RecordKind kind = RecordKind::kCandidate;
  std::string utterance_id;
  std::string strategy;
  nlohmann::json payload;
  std::string created_at;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Key of one generated candidate.
inline std::string candidate_cache_key(const std::string& utterance_id, std::string_view prompt,
                                       const std::string& model, const StrategyConfig& strategy, double temperature,
                                       int candidate_index) {
  return digest_fields({"candidate", utterance_id, sha256_hex(prompt), model, to_string(strategy.strategy),
                        std::to_string(strategy.num_candidates), detail::format_double(temperature),
                        std::to_string(candidate_index)});
}

/// Key of one verifier score for one candidate.
inline std::string verifier_cache_key(const std::string& utterance_id, std::string_view verifier_prompt,
                                      const std::string& verifier_model, const StrategyConfig& strategy,
                                      int candidate_index) {
  return digest_fields({"verifier", utterance_id, sha256_hex(verifier_prompt), verifier_model,
                        to_string(strategy.strategy), std::to_string(strategy.num_candidates),
                        std::to_string(candidate_index)});
}

inline nlohmann::json candidate_payload(const Completion& completion, int index) {
  nlohmann::json p{{"index", index}, {"raw_text", completion.text}, {"token_count", completion.token_count}};
  p["log_likelihood"] = completion.logprob_sum ? nlohmann::json(*completion.logprob_sum) : nlohmann::json(nullptr);
  return p;
}

inline Completion completion_from_payload(const nlohmann::json& p) {
  Completion c;
  c.text = p.at("raw_text").get<std::string>();
  c.token_count = p.value("token_count", 0);
  if (p.contains("log_likelihood") && !p["log_likelihood"].is_null()) c.logprob_sum = p["log_likelihood"].get<double>();
  return c;
}

/// Append-only JSONL record log with an in-memory key index. A key is
/// written at most once; later writes of an existing key are ignored.
class CandidateCache {
 public:
  /// With `repair` off the directory is only read: a missing directory
  /// is an empty cache and a torn trailing line is ignored, not truncated.
  explicit CandidateCache(std::filesystem::path dir, bool repair = true) : dir_(std::move(dir)), repair_(repair) {
    if (repair_) std::filesystem::create_directories(dir_);
    load();
  }

  const std::filesystem::path& records_path() const { return records_path_; }

  std::optional<CacheRecord> find(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& key) const {
    std::lock_guard lock(mutex_);
    return index_.count(key) != 0;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return index_.size();
  }

  /// Appends records not already present; returns how many were written.
  std::size_t append(const std::vector<CacheRecord>& records) {
    std::lock_guard lock(mutex_);
    std::string buffer;
    std::vector<const CacheRecord*> fresh;
    for (const auto& r : records) {
      if (index_.count(r.key)) continue;
      bool duplicate_in_batch = false;
      for (const auto* f : fresh) duplicate_in_batch |= f->key == r.key;
      if (duplicate_in_batch) continue;
      fresh.push_back(&r);
      buffer += to_json(r).dump() + "\n";
    }
    if (fresh.empty()) return 0;
    std::ofstream out(records_path_, std::ios::app | std::ios::binary);
    out << buffer;
    out.flush();
    if (!out) throw Error(ErrorCode::kIoError, "cannot append to " + records_path_.string());
    for (const auto* r : fresh) index_.emplace(r->key, *r);
    return fresh.size();
  }

  /// Generation failures, most recent per (utterance, strategy) last.
  void append_failure(const nlohmann::json& failure) {
    std::lock_guard lock(mutex_);
    std::ofstream out(dir_ / "failures.jsonl", std::ios::app | std::ios::binary);
    out << failure.dump() << "\n";
  }

  /// (utterance_id, strategy) pairs that failed during generation.
  std::set<std::pair<std::string, std::string>> failures() const {
    std::lock_guard lock(mutex_);
    std::set<std::pair<std::string, std::string>> out;
    std::ifstream in(dir_ / "failures.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) continue;
      out.emplace(j.value("utterance_id", ""), j.value("strategy", ""));
    }
    return out;
  }

  static nlohmann::json to_json(const CacheRecord& r) {
    return {{"key", r.key},
            {"kind", to_string(r.kind)},
            {"utterance_id", r.utterance_id},
            {"strategy", r.strategy},
            {"created_at", r.created_at},
            {"payload", r.payload}};
  }

 private:
  void load() {
    records_path_ = dir_ / "records.jsonl";
    std::ifstream in(records_path_, std::ios::binary);
    if (!in) return;
    std::string line;
    std::uintmax_t good_bytes = 0;
    std::uintmax_t offset = 0;
    while (std::getline(in, line)) {
      bool complete = !in.eof();
      offset += line.size() + (complete ? 1 : 0);
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (!complete || j.is_discarded() || !j.is_object()) break;
      CacheRecord r;
      r.key = j.value("key", "");
      r.kind = j.value("kind", "") == "verifier" ? RecordKind::kVerifier : RecordKind::kCandidate;
      r.utterance_id = j.value("utterance_id", "");
      r.strategy = j.value("strategy", "");
      r.created_at = j.value("created_at", "");
      r.payload = j.value("payload", nlohmann::json::object());
      index_.emplace(r.key, std::move(r));
      good_bytes = offset;
    }
    in.close();
    // Drop a torn trailing line left by an interrupted writer.
    if (repair_ && std::filesystem::file_size(records_path_) != good_bytes) {
      std::filesystem::resize_file(records_path_, good_bytes);
    }
  }

  std::filesystem::path dir_;
  bool repair_ = true;
  std::filesystem::path records_path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, CacheRecord> index_;
};

/// ISO-8601 UTC timestamps, or the epoch when determinism is requested.
inline std::function<std::string()> make_clock(bool deterministic) {
  if (deterministic) return [] { return std::string("1970-01-01T00:00:00Z"); };
  return [] {
    std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return std::string(buf);
  };
}

struct GenerationStats {
  std::size_t generate_requests = 0;
  std::size_t verifier_requests = 0;
  std::size_t candidate_hits = 0;
  std::size_t verifier_hits = 0;

  GenerationStats& operator+=(const GenerationStats& o) {
    generate_requests += o.generate_requests;
    verifier_requests += o.verifier_requests;
    candidate_hits += o.candidate_hits;
    verifier_hits += o.verifier_hits;
    return *this;
  }
};

/// Serves candidates from the cache and falls through to the backends on a
/// miss. New records are buffered in `pending()` for the caller to commit.
class CachingCandidateProvider final : public CandidateProvider {
 public:
  CachingCandidateProvider(const CandidateCache& cache, Backend& generator, const BackendConfig& generator_config,
                           Backend* verifier, std::function<std::string()> clock)
      : cache_(cache), generator_(generator), generator_config_(generator_config), verifier_(verifier),
        clock_(std::move(clock)) {}

  std::vector<Candidate> candidates(const CandidateQuery& query) override {
    const int n = query.strategy.num_candidates;
    std::vector<std::string> keys;
    std::vector<Completion> completions;
    for (int b = 1; b <= n; ++b) {
      keys.push_back(candidate_cache_key(query.utterance.utterance_id, query.prompt, generator_.model_name(),
                                         query.strategy, generator_config_.sampling_temperature, b));
      if (auto r = lookup(keys.back())) completions.push_back(completion_from_payload(r->payload));
    }
    if (completions.size() == static_cast<std::size_t>(n)) {
      stats_.candidate_hits += static_cast<std::size_t>(n);
    } else {
      GenerationRequest request{query.utterance, query.categories, query.prompt, n,
                                generator_config_.sampling_temperature};
      ++stats_.generate_requests;
      completions = generator_.generate(request);
      if (completions.size() != static_cast<std::size_t>(n)) {
        throw Error(ErrorCode::kTransportError, "partial batch of " + std::to_string(completions.size()));
      }
      for (int b = 1; b <= n; ++b) {
        const auto& key = keys[static_cast<std::size_t>(b - 1)];
        if (lookup(key)) {
          // Never overwrite: keep whatever an earlier run stored.
          completions[static_cast<std::size_t>(b - 1)] = completion_from_payload(lookup(key)->payload);
          continue;
        }
        pending_.push_back(CacheRecord{key, RecordKind::kCandidate, query.utterance.utterance_id,
                                       std::string(to_string(query.strategy.strategy)),
                                       candidate_payload(completions[static_cast<std::size_t>(b - 1)], b), clock_()});
      }
    }
    return candidates_from_completions(std::move(completions), CategoryMatcher(query.categories));
  }

  VerifierOutcome verifier_score(const CandidateQuery& query, const Candidate& candidate,
                                 std::string_view verifier_prompt) override {
    if (!verifier_) throw Error(ErrorCode::kConfigError, "strategy needs a verifier backend");
    auto key = verifier_cache_key(query.utterance.utterance_id, verifier_prompt, verifier_->model_name(),
                                  query.strategy, candidate.index);
    if (auto r = lookup(key)) {
      ++stats_.verifier_hits;
      return {r->payload.at("score").get<double>(), r->payload.value("fallback", false)};
    }
    ++stats_.verifier_requests;
    auto outcome = score_with_verifier(*verifier_, {query.utterance, query.categories, verifier_prompt, candidate});
    pending_.push_back(CacheRecord{key, RecordKind::kVerifier, query.utterance.utterance_id,
                                   std::string(to_string(query.strategy.strategy)),
                                   {{"index", candidate.index}, {"score", outcome.score}, {"fallback", outcome.fallback}},
                                   clock_()});
    return outcome;
  }

  std::vector<CacheRecord> take_pending() { return std::exchange(pending_, {}); }
  const GenerationStats& stats() const { return stats_; }

 private:
  std::optional<CacheRecord> lookup(const std::string& key) const {
    for (const auto& r : pending_) {
      if (r.key == key) return r;
    }
    return cache_.find(key);
  }

  const CandidateCache& cache_;
  Backend& generator_;
  const BackendConfig& generator_config_;
  Backend* verifier_;
  std::function<std::string()> clock_;
  std::vector<CacheRecord> pending_;
  GenerationStats stats_;
};

/// Read-only view used during evaluation; never contacts a backend. Misses
/// are collected and reported as MissingCandidates.
class CachedCandidateProvider final : public CandidateProvider {
 public:
  CachedCandidateProvider(const CandidateCache& cache, std::string generator_model, double temperature,
                          std::optional<std::string> verifier_model)
      : cache_(cache), generator_model_(std::move(generator_model)), temperature_(temperature),
        verifier_model_(std::move(verifier_model)) {}

  std::vector<Candidate> candidates(const CandidateQuery& query) override {
    std::vector<Completion> completions;
    std::vector<std::string> missing;
    for (int b = 1; b <= query.strategy.num_candidates; ++b) {
      auto key = candidate_cache_key(query.utterance.utterance_id, query.prompt, generator_model_, query.strategy,
                                     temperature_, b);
      if (auto r = cache_.find(key)) completions.push_back(completion_from_payload(r->payload));
      else missing.push_back(key);
    }
    if (!missing.empty()) fail(missing);
    return candidates_from_completions(std::move(completions), CategoryMatcher(query.categories));
  }

  VerifierOutcome verifier_score(const CandidateQuery& query, const Candidate& candidate,
                                 std::string_view verifier_prompt) override {
    if (!verifier_model_) throw Error(ErrorCode::kConfigError, "strategy needs a verifier backend");
    auto key = verifier_cache_key(query.utterance.utterance_id, verifier_prompt, *verifier_model_, query.strategy,
                                  candidate.index);
    auto r = cache_.find(key);
    if (!r) fail({key});
    return {r->payload.at("score").get<double>(), r->payload.value("fallback", false)};
  }

  /// Keys that were asked for and not found, in request order.
  const std::vector<std::string>& missing_keys() const { return missing_; }

 private:
  [[noreturn]] void fail(const std::vector<std::string>& keys) {
    missing_.insert(missing_.end(), keys.begin(), keys.end());
    throw Error(ErrorCode::kMissingCandidates, std::to_string(keys.size()) + " cache key(s) missing");
  }

  const CandidateCache& cache_;
  std::string generator_model_;
  double temperature_;
  std::optional<std::string> verifier_model_;
  std::vector<std::string> missing_;
};

}  // namespace emobench
