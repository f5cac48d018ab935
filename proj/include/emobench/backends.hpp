#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <random>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "emobench/digest.hpp"
#include "emobench/distributions.hpp"
#include "emobench/error.hpp"
#include "emobench/labels.hpp"
#include "emobench/metrics.hpp"
#include "emobench/parsing.hpp"

namespace emobench {

/// One sampled model response.
struct Candidate {
  int index = 1;  // 1-based sample index
  std::string raw_text;
  std::optional<EmotionDistribution> parsed;
  ParseStrategy parse_strategy = ParseStrategy::kRejected;
  /// Sum of token log-probabilities; 0 when the endpoint returned none.
  double log_likelihood = 0.0;
  int token_count = 0;
  bool logprobs_available = true;
  std::optional<double> verifier_score;
  bool verifier_fallback = false;
};

/// Raw completion as it comes back from an endpoint, before parsing.
struct Completion {
  std::string text;
  std::optional<double> logprob_sum;
  int token_count = 0;
};

struct SimulationParams {
  double noise_scale = 0.1;
  double sharpness = 10.0;
  /// Standard deviation of the noise added to simulated verifier scores.
  double verifier_noise = 0.0;
  /// Probability that a simulated sample is unparseable prose.
  double unparseable_rate = 0.0;
  std::uint64_t seed = 0;
};

struct BackendConfig {
  std::string endpoint_url;
  std::string model_name;
  /// Name of the environment variable holding the API key; never the key.
  std::string credential_env;
  int num_candidates = 1;
  double sampling_temperature = 1.0;
  std::chrono::milliseconds request_timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds retry_backoff{500};
  int max_in_flight = 4;
  SimulationParams sim;

  bool is_simulated() const { return endpoint_url.rfind("sim:", 0) == 0; }

  void validate() const {
    if (num_candidates < 1) throw Error(ErrorCode::kConfigError, "num_candidates must be >= 1");
    if (sampling_temperature < 0.0) throw Error(ErrorCode::kConfigError, "temperature must be >= 0");
    if (request_timeout.count() <= 0) throw Error(ErrorCode::kConfigError, "timeout must be > 0");
    if (max_retries < 0) throw Error(ErrorCode::kConfigError, "max_retries must be >= 0");
    if (max_in_flight < 1) throw Error(ErrorCode::kConfigError, "max_in_flight must be >= 1");
    if (sim.noise_scale < 0.0) throw Error(ErrorCode::kConfigError, "noise_scale must be >= 0");
  }
};

struct GenerationRequest {
  const AnnotatedUtterance& utterance;
  const CategorySet& categories;
  std::string_view prompt;
  int num_candidates = 1;
  double temperature = 1.0;
};

struct VerificationRequest {
  const AnnotatedUtterance& utterance;
  const CategorySet& categories;
  std::string_view prompt;
  const Candidate& candidate;
};

/// Source of completions. Implementations must tolerate concurrent calls.
class Backend {
 public:
  virtual ~Backend() = default;

  /// Exactly request.num_candidates completions, or throws TransportError.
  virtual std::vector<Completion> generate(const GenerationRequest& request) = 0;

  /// The verifier's raw reply.
  virtual std::string verify(const VerificationRequest& request) = 0;

  virtual std::string model_name() const = 0;
};

// ---------------------------------------------------------------------------
// Simulated backend

/// Perturbs the ground truth with seeded Gaussian noise, clamps at zero and
/// renormalizes. The candidate's log-likelihood is -sharpness * JS to the
/// ground truth, so closer samples score higher.
inline Candidate simulated_generate(const EmotionDistribution& ground_truth, double noise_scale, std::uint64_t seed,
                                    double sharpness = 10.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto& categories = ground_truth.categories();
  std::vector<double> raw(ground_truth.probs());
  if (noise_scale > 0.0) {
    for (int attempt = 0; attempt < 16; ++attempt) {
      double sum = 0.0;
      for (std::size_t k = 0; k < raw.size(); ++k) {
        raw[k] = std::max(0.0, ground_truth[k] + noise_scale * noise(rng));
        sum += raw[k];
      }
      if (sum > kSimplexTolerance) break;
      raw = ground_truth.probs();
    }
  }
  auto sample = normalize(raw, categories);

  nlohmann::ordered_json body = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < categories.size(); ++k) body[categories.name(k)] = sample[k];

  Candidate c;
  c.raw_text = body.dump();
  c.log_likelihood = 0.0 - sharpness * js_divergence(sample, ground_truth);
  c.token_count = static_cast<int>(2 * categories.size() + 2);
  c.parsed = std::move(sample);
  c.parse_strategy = ParseStrategy::kJsonDict;
  return c;
}

/// Offline backend selected by a "sim:" endpoint. Every draw is seeded from
/// (seed, utterance, prompt, sample index), so results do not depend on
/// call order or concurrency.
class SimulatedBackend final : public Backend {
 public:
  SimulatedBackend(SimulationParams params, std::string model_name = "simulated")
      : params_(params), model_name_(std::move(model_name)) {}

  std::vector<Completion> generate(const GenerationRequest& request) override {
    auto truth = build_soft_label(request.utterance, request.categories);
    const std::string seed_text = std::to_string(params_.seed);
    const std::string prompt_digest = sha256_hex(request.prompt);
    std::vector<Completion> out;
    out.reserve(static_cast<std::size_t>(request.num_candidates));
    for (int b = 1; b <= request.num_candidates; ++b) {
      const std::string index_text = std::to_string(b);
      auto seed = seed_from_fields({"generate", seed_text, request.utterance.utterance_id, prompt_digest, index_text});
      auto candidate = simulated_generate(truth, params_.noise_scale, seed, params_.sharpness);
      Completion completion{std::move(candidate.raw_text), candidate.log_likelihood, candidate.token_count};
      if (params_.unparseable_rate > 0.0) {
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
        if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < params_.unparseable_rate) {
          completion.text = "I cannot tell from this recording.";
        }
      }
      out.push_back(std::move(completion));
    }
    return out;
  }

  /// Replies with 1 - JS(candidate, truth), optionally noised, as text.
  std::string verify(const VerificationRequest& request) override {
    if (!request.candidate.parsed) return "0.0";
    auto truth = build_soft_label(request.utterance, request.categories);
    double score = 1.0 - js_divergence(*request.candidate.parsed, truth);
    if (params_.verifier_noise > 0.0) {
      auto seed = seed_from_fields({"verify", std::to_string(params_.seed), request.utterance.utterance_id,
                                    sha256_hex(request.prompt)});
      std::mt19937_64 rng(seed);
      score += params_.verifier_noise * std::normal_distribution<double>(0.0, 1.0)(rng);
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", std::clamp(score, 0.0, 1.0));
    return buf;
  }

  std::string model_name() const override { return model_name_; }

 private:
  SimulationParams params_;
  std::string model_name_;
};

// ---------------------------------------------------------------------------
// Candidate generation and verification

/// Samples B candidates, parses each, and orders them by descending
/// log-likelihood (ties keep sample order).
inline std::vector<Candidate> candidates_from_completions(std::vector<Completion> completions,
                                                          const CategoryMatcher& matcher) {
  std::vector<Candidate> out;
  out.reserve(completions.size());
  int index = 1;
  for (auto& completion : completions) {
    Candidate c;
    c.index = index++;
    auto outcome = parse_output(completion.text, matcher);
    c.parsed = std::move(outcome.distribution);
    c.parse_strategy = outcome.strategy_used;
    c.raw_text = std::move(completion.text);
    c.logprobs_available = completion.logprob_sum.has_value();
    c.log_likelihood = completion.logprob_sum.value_or(0.0);
    c.token_count = completion.token_count;
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Candidate& a, const Candidate& b) { return a.log_likelihood > b.log_likelihood; });
  return out;
}

inline std::vector<Candidate> generate_candidates(Backend& backend, const AnnotatedUtterance& utterance,
                                                  const CategorySet& categories, std::string_view prompt,
                                                  const BackendConfig& config, const CategoryMatcher& matcher) {
  GenerationRequest request{utterance, categories, prompt, config.num_candidates, config.sampling_temperature};
  auto completions = backend.generate(request);
  if (completions.size() != static_cast<std::size_t>(config.num_candidates)) {
    throw Error(ErrorCode::kTransportError, "backend returned " + std::to_string(completions.size()) +
                                                " of " + std::to_string(config.num_candidates) + " candidates");
  }
  return candidates_from_completions(std::move(completions), matcher);
}

struct VerifierOutcome {
  double score = 0.5;
  bool fallback = false;
};

inline constexpr double kVerifierFallbackScore = 0.5;

/// Asks the verifier for a score; a reply without a number gets one retry,
/// after which the mid-rubric fallback is returned and flagged.
inline VerifierOutcome score_with_verifier(Backend& verifier, const VerificationRequest& request) {
  if (request.candidate.raw_text.empty()) throw Error(ErrorCode::kConfigError, "candidate has no text");
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string reply = verifier.verify(request);
    try {
      return {parse_verifier_score(reply), false};
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoNumberFound) throw;
    }
  }
  return {kVerifierFallbackScore, true};
}

// ---------------------------------------------------------------------------
// Remote chat-completions backend

namespace detail {

inline std::string base64_encode(std::string_view data) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < data.size(); i += 3) {
    std::uint32_t v = (static_cast<unsigned char>(data[i]) << 16) | (static_cast<unsigned char>(data[i + 1]) << 8) |
                      static_cast<unsigned char>(data[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < data.size()) {
    std::uint32_t v = static_cast<unsigned char>(data[i]) << 16;
    if (i + 1 < data.size()) v |= static_cast<unsigned char>(data[i + 1]) << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < data.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::string read_audio(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kAudioReadError, "cannot read audio file " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string audio_format(const std::filesystem::path& path) {
  std::string ext = to_lower(path.extension().string());
  if (!ext.empty() && ext.front() == '.') ext.erase(0, 1);
  return ext.empty() ? "wav" : ext;
}

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

inline ParsedUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::kConfigError, "endpoint URL lacks a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/v1/chat/completions"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

inline std::string message_text(const nlohmann::json& message) {
  const auto& content = message.at("content");
  if (content.is_string()) return content.get<std::string>();
  std::string text;
  for (const auto& part : content) {
    if (part.value("type", "") == "text") text += part.value("text", "");
  }
  return text;
}

}  // namespace detail

/// Chat-completions client: one user message with a text part (the prompt)
/// and an inline base64 audio part; per-token log-probabilities requested.
class HttpChatBackend final : public Backend {
 public:
  explicit HttpChatBackend(BackendConfig config)
      : config_(std::move(config)), url_(detail::split_url(config_.endpoint_url)),
        in_flight_(config_.max_in_flight) {}

  std::vector<Completion> generate(const GenerationRequest& request) override {
    auto body = request_body(request.utterance, request.prompt, request.num_candidates, request.temperature, true);
    auto response = post_with_retries(body, static_cast<std::size_t>(request.num_candidates));
    std::vector<Completion> out;
    for (const auto& choice : response.at("choices")) {
      Completion c;
      c.text = detail::message_text(choice.at("message"));
      if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object() && lp->contains("content") &&
                                             (*lp)["content"].is_array()) {
        double sum = 0.0;
        for (const auto& token : (*lp)["content"]) sum += token.at("logprob").get<double>();
        c.logprob_sum = sum;
        c.token_count = static_cast<int>((*lp)["content"].size());
      }
      out.push_back(std::move(c));
      if (out.size() == static_cast<std::size_t>(request.num_candidates)) break;
    }
    return out;
  }

  std::string verify(const VerificationRequest& request) override {
    auto body = request_body(request.utterance, request.prompt, 1, config_.sampling_temperature, false);
    auto response = post_with_retries(body, 1);
    return detail::message_text(response.at("choices").at(0).at("message"));
  }

  std::string model_name() const override { return config_.model_name; }

  nlohmann::json request_body(const AnnotatedUtterance& utterance, std::string_view prompt, int n,
                              double temperature, bool logprobs) const {
    std::string audio = detail::read_audio(utterance.audio_path);
    nlohmann::json content = nlohmann::json::array();
    content.push_back({{"type", "text"}, {"text", std::string(prompt)}});
    content.push_back({{"type", "input_audio"},
                       {"input_audio",
                        {{"data", detail::base64_encode(audio)}, {"format", detail::audio_format(utterance.audio_path)}}}});
    return {{"model", config_.model_name},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})},
            {"temperature", temperature},
            {"n", n},
            {"logprobs", logprobs}};
  }

 private:
  /// POSTs `body`; transport failures, non-2xx replies, malformed bodies
  /// and short batches are retried with exponential backoff.
  nlohmann::json post_with_retries(const nlohmann::json& body, std::size_t expected_choices) {
    const std::string payload = body.dump();
    httplib::Headers headers;
    if (!config_.credential_env.empty()) {
      if (const char* key = std::getenv(config_.credential_env.c_str())) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
      }
    }
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(config_.retry_backoff * (1 << (attempt - 1)));
      in_flight_.acquire();
      httplib::Result result = [&] {
        httplib::Client client(url_.scheme_host_port);
        auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(config_.request_timeout);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        return client.Post(url_.path, headers, payload, "application/json");
      }();
      in_flight_.release();
      if (!result) {
        last_error = "request failed: " + httplib::to_string(result.error());
        continue;
      }
      if (result->status < 200 || result->status >= 300) {
        last_error = "HTTP status " + std::to_string(result->status);
        continue;
      }
      auto json = nlohmann::json::parse(result->body, nullptr, false);
      if (json.is_discarded() || !json.is_object() || !json.contains("choices") || !json["choices"].is_array()) {
        last_error = "malformed response body";
        continue;
      }
      if (json["choices"].size() < expected_choices) {
        last_error = "partial batch: " + std::to_string(json["choices"].size()) + " choices";
        continue;
      }
      bool well_formed = std::all_of(json["choices"].begin(), json["choices"].end(), [](const nlohmann::json& c) {
        if (!c.is_object() || !c.contains("message") || !c["message"].is_object()) return false;
        const auto& content = c["message"].value("content", nlohmann::json());
        return content.is_string() || content.is_array();
      });
      if (!well_formed) {
        last_error = "malformed choice";
        continue;
      }
      return json;
    }
    throw Error(ErrorCode::kTransportError, config_.endpoint_url + ": " + last_error + " after " +
                                                std::to_string(config_.max_retries + 1) + " attempts");
  }

  BackendConfig config_;
  detail::ParsedUrl url_;
  std::counting_semaphore<1024> in_flight_;
};

inline std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  config.validate();
  if (config.is_simulated()) return std::make_unique<SimulatedBackend>(config.sim, config.model_name);
  return std::make_unique<HttpChatBackend>(config);
}

}  // namespace emobench
