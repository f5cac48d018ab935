#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emobench/backends.hpp"
#include "emobench/error.hpp"
#include "emobench/labels.hpp"
#include "emobench/parsing.hpp"
#include "emobench/prompts.hpp"
#include "emobench/tts.hpp"

namespace emobench {

struct DatasetConfig {
  std::string id;
  std::filesystem::path manifest;
  CategorySet categories;
  PromptVariant variant = PromptVariant::kUtterance;
  PromptBook prompts;
};

struct RunConfig {
  std::vector<DatasetConfig> datasets;
  BackendConfig generator;
  std::optional<BackendConfig> verifier;
  std::vector<StrategyConfig> strategies;
  std::filesystem::path cache_dir;
  std::filesystem::path output_dir;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  BinMode bin_mode = BinMode::kQuantile;
  /// Fail an utterance up front when its audio file is missing. Defaults
  /// to off for simulated generators, which never read audio.
  bool check_audio = true;
  /// Stamp cache records with a fixed time so simulated runs are
  /// byte-reproducible. Defaults to on for simulated generators.
  bool deterministic_timestamps = false;

  const DatasetConfig& dataset(const std::string& id) const {
    for (const auto& d : datasets) {
      if (d.id == id) return d;
    }
    throw Error(ErrorCode::kConfigError, "unknown dataset '" + id + "'");
  }

  /// Checks cross-field invariants. Called before any backend is contacted.
  void validate() const {
    if (datasets.empty()) throw Error(ErrorCode::kConfigError, "no datasets configured");
    if (strategies.empty()) throw Error(ErrorCode::kConfigError, "no strategies selected");
    if (jobs < 1) throw Error(ErrorCode::kConfigError, "jobs must be >= 1");
    generator.validate();
    if (verifier) verifier->validate();
    for (const auto& s : strategies) {
      s.validate();
      bool wants_verifier = needs_verifier(s.strategy) || s.weight_source == ScoreSource::kVerifier;
      if (wants_verifier && !verifier) {
        throw Error(ErrorCode::kConfigError,
                    "strategy " + std::string(to_string(s.strategy)) + " needs a verifier backend");
      }
    }
    bool simulated = generator.is_simulated() || (verifier && verifier->is_simulated());
    if (simulated && !seed) throw Error(ErrorCode::kConfigError, "simulated backends need a fixed seed");
  }
};

namespace detail {

inline std::string default_background(const std::string& dataset_id) {
  std::string id = to_lower(dataset_id);
  if (id.find("iemocap") != std::string::npos) return std::string(prompt_defaults::kBackground);
  if (id.find("crema") != std::string::npos) return "An actor is speaking a short sentence.";
  if (id.find("msp") != std::string::npos) return "A speaker is talking in a podcast.";
  return "A person is speaking.";
}

inline PromptVariant default_variant(const std::string& dataset_id) {
  return to_lower(dataset_id).find("crema") != std::string::npos ? PromptVariant::kAudio : PromptVariant::kUtterance;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline BackendConfig parse_backend(const nlohmann::json& j) {
  BackendConfig c;
  c.endpoint_url = j.at("endpoint").get<std::string>();
  c.model_name = j.value("model", c.is_simulated() ? std::string("simulated") : std::string());
  if (c.model_name.empty()) throw Error(ErrorCode::kConfigError, "backend '" + c.endpoint_url + "' needs a model");
  if (j.contains("api_key")) {
    throw Error(ErrorCode::kConfigError, "credentials must be referenced through credential_env");
  }
  c.credential_env = j.value("credential_env", "");
  c.sampling_temperature = j.value("temperature", 1.0);
  c.request_timeout = std::chrono::milliseconds(j.value("timeout_ms", 60000));
  c.max_retries = j.value("max_retries", 3);
  c.retry_backoff = std::chrono::milliseconds(j.value("retry_backoff_ms", 500));
  c.max_in_flight = j.value("max_in_flight", 4);
  c.sim.noise_scale = j.value("noise_scale", c.sim.noise_scale);
  c.sim.sharpness = j.value("sharpness", c.sim.sharpness);
  c.sim.verifier_noise = j.value("verifier_noise", c.sim.verifier_noise);
  c.sim.unparseable_rate = j.value("unparseable_rate", c.sim.unparseable_rate);
  return c;
}

inline StrategyConfig parse_strategy_entry(const nlohmann::json& j) {
  if (j.is_string()) return StrategyConfig::defaults(parse_strategy(j.get<std::string>()));
  auto c = StrategyConfig::defaults(parse_strategy(j.at("name").get<std::string>()));
  c.num_candidates = j.value("B", c.num_candidates);
  c.tau = j.value("tau", c.tau);
  if (j.contains("weight_source")) {
    auto src = j["weight_source"].get<std::string>();
    if (src == "loglik") c.weight_source = ScoreSource::kLogLikelihood;
    else if (src == "verifier") c.weight_source = ScoreSource::kVerifier;
    else throw Error(ErrorCode::kConfigError, "unknown weight_source '" + src + "'");
  }
  if (j.contains("weight_transform")) {
    auto t = j["weight_transform"].get<std::string>();
    if (t == "softmax") c.weight_transform = WeightTransform::kSoftmax;
    else if (t == "direct-normalize") c.weight_transform = WeightTransform::kDirectNormalize;
    else throw Error(ErrorCode::kConfigError, "unknown weight_transform '" + t + "'");
  }
  c.per_token_loglik = j.value("per_token_loglik", false);
  return c;
}

}  // namespace detail

/// Builds a RunConfig from its JSON document. Relative paths resolve
/// against `base_dir`.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  RunConfig config;
  try {
    for (const auto& d : j.at("datasets")) {
      const std::string id = d.at("id").get<std::string>();
      CategorySet categories(d.at("categories").get<std::vector<std::string>>());
      std::string background = d.value("background", detail::default_background(id));
      PromptVariant variant = d.contains("variant") ? parse_prompt_variant(d["variant"].get<std::string>())
                                                    : detail::default_variant(id);
      PromptBook prompts = d.contains("template_file")
                               ? PromptBook::from_file(detail::resolve(base_dir, d["template_file"].get<std::string>()),
                                                       background)
                               : PromptBook::defaults(background);
      config.datasets.push_back(DatasetConfig{id, detail::resolve(base_dir, d.at("manifest").get<std::string>()),
                                              std::move(categories), variant, std::move(prompts)});
    }
    config.generator = detail::parse_backend(j.at("generator"));
    if (j.contains("verifier") && !j["verifier"].is_null()) config.verifier = detail::parse_backend(j["verifier"]);
    for (const auto& s : j.value("strategies", nlohmann::json::array())) {
      config.strategies.push_back(detail::parse_strategy_entry(s));
    }
    config.cache_dir = detail::resolve(base_dir, j.value("cache_dir", "cache"));
    config.output_dir = detail::resolve(base_dir, j.value("output_dir", "results"));
    if (j.contains("seed")) config.seed = j["seed"].get<std::uint64_t>();
    config.jobs = j.value("jobs", 1);
    config.bin_mode = parse_bin_mode(j.value("bin_mode", "quantile"));
    config.check_audio = j.value("check_audio", !config.generator.is_simulated());
    config.deterministic_timestamps = j.value("deterministic_timestamps", config.generator.is_simulated());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigError, e.what());
  }
  return config;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, "cannot open config " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false, /*ignore_comments=*/true);
  if (j.is_discarded()) throw Error(ErrorCode::kConfigError, "config " + path.string() + " is not valid JSON");
  return parse_run_config(j, path.parent_path());
}

/// Pushes the global seed into simulated backends.
inline void apply_seed(RunConfig& config) {
  if (!config.seed) return;
  config.generator.sim.seed = *config.seed;
  if (config.verifier) config.verifier->sim.seed = *config.seed;
}

}  // namespace emobench
