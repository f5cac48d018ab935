#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "emobench/distributions.hpp"
#include "emobench/error.hpp"
#include "emobench/labels.hpp"

namespace emobench {

enum class PromptKind { kBase, kCot, kVerifier };
enum class PromptVariant { kUtterance, kAudio };

inline std::string_view to_string(PromptVariant v) { return v == PromptVariant::kAudio ? "audio" : "utterance"; }

inline PromptVariant parse_prompt_variant(std::string_view text) {
  if (text == "utterance") return PromptVariant::kUtterance;
  if (text == "audio") return PromptVariant::kAudio;
  throw Error(ErrorCode::kConfigError, "unknown prompt variant '" + std::string(text) + "'");
}

/// Section texts for one prompt family. Placeholders in braces are filled
/// at render time: {categories}, {json_structure}, {subject}, {transcript},
/// {candidate}.
struct PromptTemplate {
  PromptKind kind = PromptKind::kBase;
  std::string background;
  std::string task_text;
  std::string output_constraints;
  std::optional<std::string> cot_instructions;
};

namespace prompt_defaults {

inline constexpr std::string_view kBackground = "Two speakers are having a conversation.";

inline constexpr std::string_view kTask =
    "Predict the probability distribution of emotions for {subject} from the following options: "
    "{categories}.\n\nConsider both the context and acoustic features.";

inline constexpr std::string_view kConstraints =
    "1. Generate EXACTLY this JSON structure: {json_structure}\n"
    "Before outputting, check if the format of your output is in accordance with the requirements I "
    "provided.\n"
    "2. Sum of probabilities must equal to 1.0.\n"
    "3. Do not include any explanations or text besides the dictionary.";

inline constexpr std::string_view kCot =
    "- First, carefully listen to the tone, intonation, pauses, vocal energy, and other acoustic "
    "features.\n"
    "- Second, examine the textual content, considering words, sentiment, and contextual cues.\n"
    "- Identify all emotional cues, even subtle ones.\n"
    "- For each emotion, evaluate if it is present. If multiple are present, estimate their relative "
    "strength and presence.";

inline constexpr std::string_view kVerifierBackground =
    "You are evaluating a model's prediction for an emotion distribution task.";

inline constexpr std::string_view kVerifierTask =
    "Only scoring based on emotion content: how well does the distribution reflect the emotional "
    "content of the utterance and context?";

inline constexpr std::string_view kVerifierGuide =
    "- 0.0–0.3: Clearly wrong or unrelated\n"
    "- 0.4–0.7: Partially reasonable or somewhat mismatched\n"
    "- 0.8–1.0: Good match to the expected emotional distribution\n"
    "- Reply ONLY with a number between 0.0 and 1.0.";

}  // namespace prompt_defaults

/// The three prompt families used by one dataset.
struct PromptBook {
  PromptTemplate base;
  PromptTemplate cot;
  PromptTemplate verifier;

  static PromptBook defaults(std::string background = std::string(prompt_defaults::kBackground)) {
    PromptBook book;
    book.base = {PromptKind::kBase, background, std::string(prompt_defaults::kTask),
                 std::string(prompt_defaults::kConstraints), std::nullopt};
    book.cot = book.base;
    book.cot.kind = PromptKind::kCot;
    book.cot.cot_instructions = std::string(prompt_defaults::kCot);
    book.verifier = {PromptKind::kVerifier, std::string(prompt_defaults::kVerifierBackground),
                     std::string(prompt_defaults::kVerifierTask),
                     std::string(prompt_defaults::kVerifierGuide), std::nullopt};
    return book;
  }

  /// Loads a template file made of `[section]` headers followed by text.
  /// Recognized sections: background, task, cot, constraints,
  /// verifier.background, verifier.task, verifier.guide. Sections left out
  /// keep their defaults.
  static PromptBook from_stream(std::istream& in, std::string background = std::string(prompt_defaults::kBackground)) {
    std::map<std::string, std::string> sections;
    std::string current;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.size() > 2 && line.front() == '[' && line.back() == ']') {
        current = line.substr(1, line.size() - 2);
        sections[current];
        continue;
      }
      if (current.empty()) continue;
      auto& body = sections[current];
      if (!body.empty()) body += '\n';
      body += line;
    }
    static const std::set<std::string> known{"background",          "task",           "cot",
                                             "constraints",         "verifier.background",
                                             "verifier.task",       "verifier.guide"};
    for (auto& [name, body] : sections) {
      if (!known.count(name)) throw Error(ErrorCode::kConfigError, "unknown template section [" + name + "]");
      while (!body.empty() && body.back() == '\n') body.pop_back();
    }
    auto pick = [&](const std::string& name, std::string fallback) {
      auto it = sections.find(name);
      return it == sections.end() ? std::move(fallback) : it->second;
    };
    PromptBook book = defaults(pick("background", std::move(background)));
    book.base.task_text = pick("task", book.base.task_text);
    book.base.output_constraints = pick("constraints", book.base.output_constraints);
    book.cot.background = book.base.background;
    book.cot.task_text = book.base.task_text;
    book.cot.output_constraints = book.base.output_constraints;
    book.cot.cot_instructions = pick("cot", *book.cot.cot_instructions);
    book.verifier.background = pick("verifier.background", book.verifier.background);
    book.verifier.task_text = pick("verifier.task", book.verifier.task_text);
    book.verifier.output_constraints = pick("verifier.guide", book.verifier.output_constraints);
    return book;
  }

  static PromptBook from_file(const std::filesystem::path& path,
                              std::string background = std::string(prompt_defaults::kBackground)) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open template file " + path.string());
    return from_stream(in, std::move(background));
  }

  const PromptTemplate& for_kind(PromptKind kind) const {
    switch (kind) {
      case PromptKind::kBase: return base;
      case PromptKind::kCot: return cot;
      case PromptKind::kVerifier: return verifier;
    }
    return base;
  }
};

/// Python-style list literal, e.g. ['Neutral state', 'Happiness'].
inline std::string category_list_literal(const CategorySet& categories) {
  std::string out = "[";
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (i) out += ", ";
    out += "'" + categories.name(i) + "'";
  }
  return out + "]";
}

/// The JSON skeleton models are asked to emit, e.g. {"Anger":float, ...}.
inline std::string json_structure_literal(const CategorySet& categories) {
  std::string out = "{";
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (i) out += ", ";
    out += "\"" + categories.name(i) + "\":float";
  }
  return out + "}";
}

/// Single-pass placeholder substitution; unknown {names} are left alone.
inline std::string fill_placeholders(std::string_view text, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      auto close = text.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = values.find(std::string(text.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(text[i++]);
  }
  return out;
}

namespace detail {

inline std::map<std::string, std::string> placeholder_values(const AnnotatedUtterance& utterance,
                                                             const CategorySet& categories,
                                                             PromptVariant variant) {
  return {{"categories", category_list_literal(categories)},
          {"json_structure", json_structure_literal(categories)},
          {"subject", variant == PromptVariant::kAudio ? "the audio" : "the target utterance"},
          {"transcript", utterance.transcript.value_or("")}};
}

inline void append_section(std::string& out, std::string_view title, std::string_view body) {
  if (!out.empty()) out += "\n\n";
  out += title;
  out += ":\n";
  out += body;
}

}  // namespace detail

inline std::string build_prediction_prompt(const AnnotatedUtterance& utterance, const CategorySet& categories,
                                           PromptKind kind, PromptVariant variant, const PromptBook& book) {
  if (kind == PromptKind::kVerifier) {
    throw Error(ErrorCode::kConfigError, "verifier prompts are built with build_verifier_prompt");
  }
  if (variant == PromptVariant::kUtterance && !utterance.transcript) {
    throw Error(ErrorCode::kMissingTranscript, "utterance '" + utterance.utterance_id + "' has no transcript");
  }
  const PromptTemplate& tpl = book.for_kind(kind);
  auto values = detail::placeholder_values(utterance, categories, variant);
  std::string out;
  detail::append_section(out, "Background", fill_placeholders(tpl.background, values));
  if (variant == PromptVariant::kUtterance) {
    detail::append_section(out, "Target Utterance", *utterance.transcript);
  }
  detail::append_section(out, "Task", fill_placeholders(tpl.task_text, values));
  if (kind == PromptKind::kCot && tpl.cot_instructions) {
    detail::append_section(out, "CoT Instructions", fill_placeholders(*tpl.cot_instructions, values));
  }
  detail::append_section(out, "Output Constraints", fill_placeholders(tpl.output_constraints, values));
  return out;
}

inline std::string build_prediction_prompt(const AnnotatedUtterance& utterance, const CategorySet& categories,
                                           PromptKind kind, PromptVariant variant) {
  return build_prediction_prompt(utterance, categories, kind, variant, PromptBook::defaults());
}

/// Verifier prompt: evaluation background, the user's task, the candidate
/// output verbatim, then the scoring guide.
inline std::string build_verifier_prompt(const AnnotatedUtterance& utterance, std::string_view candidate_raw,
                                         const CategorySet& categories, PromptVariant variant,
                                         const PromptBook& book) {
  if (candidate_raw.empty()) throw Error(ErrorCode::kConfigError, "empty candidate text");
  auto values = detail::placeholder_values(utterance, categories, variant);
  values["candidate"] = std::string(candidate_raw);
  std::string user_prompt = fill_placeholders(book.base.task_text, values);
  if (variant == PromptVariant::kUtterance && utterance.transcript) {
    user_prompt = "Target Utterance: " + *utterance.transcript + "\n\n" + user_prompt;
  }
  const PromptTemplate& tpl = book.verifier;
  std::string out;
  detail::append_section(out, "Background", fill_placeholders(tpl.background, values));
  detail::append_section(out, "Role", "User");
  detail::append_section(out, "User Prompt", user_prompt);
  detail::append_section(out, "Model Output", candidate_raw);
  detail::append_section(out, "Task", fill_placeholders(tpl.task_text, values));
  detail::append_section(out, "Scoring Guide", fill_placeholders(tpl.output_constraints, values));
  return out;
}

inline std::string build_verifier_prompt(const AnnotatedUtterance& utterance, std::string_view candidate_raw,
                                         const CategorySet& categories,
                                         PromptVariant variant = PromptVariant::kUtterance) {
  return build_verifier_prompt(utterance, candidate_raw, categories, variant, PromptBook::defaults());
}

}  // namespace emobench
