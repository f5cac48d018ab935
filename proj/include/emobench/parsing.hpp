#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "emobench/distributions.hpp"
#include "emobench/error.hpp"

namespace emobench {

enum class ParseStrategy { kJsonDict, kEmotionList, kFloatList, kKeywordMatch, kRejected };

inline std::string_view to_string(ParseStrategy s) {
  switch (s) {
    case ParseStrategy::kJsonDict: return "json-dict";
    case ParseStrategy::kEmotionList: return "emotion-list";
    case ParseStrategy::kFloatList: return "float-list";
    case ParseStrategy::kKeywordMatch: return "keyword-match";
    case ParseStrategy::kRejected: return "rejected";
  }
  return "rejected";
}

struct ParseOutcome {
  std::optional<EmotionDistribution> distribution;
  ParseStrategy strategy_used = ParseStrategy::kRejected;
  std::string raw_text;

  bool ok() const noexcept { return distribution.has_value(); }
};

namespace detail {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string_view trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

/// Lowercase, trimmed, inner whitespace collapsed, surrounding quotes removed.
inline std::string canonical_token(std::string_view s) {
  s = trim(s);
  while (s.size() >= 1 && (s.front() == '"' || s.front() == '\'')) s.remove_prefix(1);
  while (s.size() >= 1 && (s.back() == '"' || s.back() == '\'')) s.remove_suffix(1);
  s = trim(s);
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

/// Alphabetic words of `text`, lowercased.
inline std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalpha(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

// Inflection groups; a category inherits a group when any word of its name
// belongs to it.
inline const std::vector<std::vector<std::string>>& emotion_lexicon() {
  static const std::vector<std::vector<std::string>> groups{
      {"anger", "angry", "angered", "angrily"},
      {"happiness", "happy", "happily", "joy", "joyful"},
      {"sadness", "sad", "sadly"},
      {"neutral", "neutrality"},
      {"fear", "fearful", "afraid", "scared"},
      {"disgust", "disgusted", "disgusting"},
      {"surprise", "surprised"},
      {"contempt", "contemptuous"},
      {"frustration", "frustrated"},
      {"excitement", "excited"},
      {"calm", "calmness"},
  };
  return groups;
}

}  // namespace detail

/// Maps free-form emotion mentions onto a CategorySet: exact names first
/// (case-insensitive), then the inflection lexicon.
class CategoryMatcher {
 public:
  explicit CategoryMatcher(CategorySet categories) : categories_(std::move(categories)) {
    keywords_.resize(categories_.size());
    for (std::size_t k = 0; k < categories_.size(); ++k) {
      std::string name = detail::canonical_token(categories_.name(k));
      by_name_.emplace(name, k);
      keywords_[k].insert(name);
      auto name_words = detail::words_of(name);
      for (const auto& group : detail::emotion_lexicon()) {
        bool related = std::any_of(name_words.begin(), name_words.end(), [&](const std::string& w) {
          return std::find(group.begin(), group.end(), w) != group.end();
        });
        if (related) keywords_[k].insert(group.begin(), group.end());
      }
    }
    for (std::size_t k = 0; k < keywords_.size(); ++k) {
      for (const auto& kw : keywords_[k]) {
        auto [it, inserted] = by_alias_.emplace(kw, k);
        if (!inserted && it->second != k) ambiguous_.insert(kw);
      }
    }
  }

  const CategorySet& categories() const noexcept { return categories_; }

  /// Whole-token lookup used for dictionary keys and list entries.
  std::optional<std::size_t> match(std::string_view token) const {
    std::string key = detail::canonical_token(token);
    if (auto it = by_name_.find(key); it != by_name_.end()) return it->second;
    if (ambiguous_.count(key)) return std::nullopt;
    if (auto it = by_alias_.find(key); it != by_alias_.end()) return it->second;
    return std::nullopt;
  }

  /// Categories mentioned anywhere in free text, as word-bounded keywords.
  std::vector<std::size_t> mentions(std::string_view text) const {
    auto words = detail::words_of(text);
    std::string joined = " ";
    for (const auto& w : words) joined += w + " ";
    std::vector<std::size_t> hits;
    for (std::size_t k = 0; k < keywords_.size(); ++k) {
      for (const auto& kw : keywords_[k]) {
        std::string needle = " ";
        for (const auto& w : detail::words_of(kw)) needle += w + " ";
        if (needle.size() > 1 && joined.find(needle) != std::string::npos) {
          hits.push_back(k);
          break;
        }
      }
    }
    return hits;
  }

 private:
  CategorySet categories_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::unordered_map<std::string, std::size_t> by_alias_;
  std::set<std::string> ambiguous_;
  std::vector<std::set<std::string>> keywords_;
};

namespace detail {

inline std::string strip_code_fences(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    if (raw.compare(i, 3, "```") == 0) {
      i += 3;
      while (i < raw.size() && std::isalnum(static_cast<unsigned char>(raw[i]))) ++i;
      continue;
    }
    out.push_back(raw[i++]);
  }
  return std::string(trim(out));
}

/// First balanced {...} span, skipping braces inside string literals.
inline std::optional<std::string> first_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos;
       start = text.find('{', start + 1)) {
    int depth = 0;
    char quote = 0;
    bool escape = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      char c = text[i];
      if (quote) {
        if (escape) escape = false;
        else if (c == '\\') escape = true;
        else if (c == quote) quote = 0;
        continue;
      }
      if (c == '"' || c == '\'') quote = c;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) return std::string(text.substr(start, i - start + 1));
    }
  }
  return std::nullopt;
}

/// Contents of every innermost [...] span, in order of appearance.
inline std::vector<std::string> bracket_lists(std::string_view text) {
  std::vector<std::string> lists;
  std::size_t open = std::string_view::npos;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '[') {
      open = i;
    } else if (text[i] == ']' && open != std::string_view::npos) {
      lists.emplace_back(text.substr(open + 1, i - open - 1));
      open = std::string_view::npos;
    }
  }
  return lists;
}

inline std::vector<std::string> split_items(std::string_view content) {
  std::vector<std::string> items;
  std::size_t start = 0;
  char quote = 0;
  for (std::size_t i = 0; i <= content.size(); ++i) {
    if (i < content.size()) {
      char c = content[i];
      if (quote) {
        if (c == quote) quote = 0;
        continue;
      }
      if (c == '"' || c == '\'') {
        quote = c;
        continue;
      }
      if (c != ',') continue;
    }
    auto item = trim(content.substr(start, i - start));
    if (!item.empty()) items.emplace_back(item);
    start = i + 1;
  }
  return items;
}

/// Parses the whole of `s` as one real number.
inline std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  std::string buf(s);
  char* end = nullptr;
  double v = std::strtod(buf.c_str(), &end);
  if (end == buf.c_str()) return std::nullopt;
  std::string_view rest = trim(std::string_view(end));
  if (rest == "%") rest = {};
  if (!rest.empty() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::vector<double> numbers_in_list(std::string_view content) {
  std::vector<double> values;
  std::string flat(content);
  for (char& c : flat) {
    if (c == ',' || c == ';') c = ' ';
  }
  std::size_t i = 0;
  while (i < flat.size()) {
    while (i < flat.size() && std::isspace(static_cast<unsigned char>(flat[i]))) ++i;
    if (i >= flat.size()) break;
    std::size_t j = i;
    while (j < flat.size() && !std::isspace(static_cast<unsigned char>(flat[j]))) ++j;
    auto v = parse_number(std::string_view(flat).substr(i, j - i));
    if (!v) return {};
    values.push_back(*v);
    i = j;
  }
  return values;
}

/// Clamps negatives to zero, then normalizes; nullopt when nothing remains.
inline std::optional<EmotionDistribution> clamp_and_normalize(std::vector<double> raw,
                                                              const CategorySet& categories) {
  double sum = 0.0;
  for (double& x : raw) {
    if (!std::isfinite(x)) return std::nullopt;
    x = std::max(x, 0.0);
    sum += x;
  }
  if (!(sum > kSimplexTolerance)) return std::nullopt;
  return normalize(raw, categories);
}

inline EmotionDistribution uniform_over(const std::vector<std::size_t>& indices, const CategorySet& categories) {
  std::vector<double> raw(categories.size(), 0.0);
  for (auto k : indices) raw[k] = 1.0;
  return normalize(raw, categories);
}

enum class StageResult { kNoMatch, kAccepted, kRejected };

struct Stage {
  StageResult result = StageResult::kNoMatch;
  std::optional<EmotionDistribution> distribution;
};

inline std::optional<nlohmann::json> parse_object_leniently(const std::string& text) {
  auto attempt = [](const std::string& s) -> std::optional<nlohmann::json> {
    auto j = nlohmann::json::parse(s, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    return j;
  };
  if (auto j = attempt(text)) return j;
  // Python-style dict repr and trailing commas are the usual offenders.
  std::string repaired = text;
  if (repaired.find('"') == std::string::npos) std::replace(repaired.begin(), repaired.end(), '\'', '"');
  std::string no_trailing;
  for (std::size_t i = 0; i < repaired.size(); ++i) {
    if (repaired[i] == ',') {
      std::size_t j = i + 1;
      while (j < repaired.size() && std::isspace(static_cast<unsigned char>(repaired[j]))) ++j;
      if (j < repaired.size() && (repaired[j] == '}' || repaired[j] == ']')) continue;
    }
    no_trailing.push_back(repaired[i]);
  }
  return attempt(no_trailing);
}

inline Stage json_dict_stage(std::string_view text, const CategoryMatcher& matcher) {
  auto object_text = first_object(text);
  if (!object_text) return {};
  auto object = parse_object_leniently(*object_text);
  if (!object) return {};
  const auto& categories = matcher.categories();
  std::vector<double> raw(categories.size(), 0.0);
  bool recognized = false;
  for (const auto& [key, value] : object->items()) {
    auto k = matcher.match(key);
    if (!k) continue;
    std::optional<double> v;
    if (value.is_number()) v = value.get<double>();
    else if (value.is_string()) v = parse_number(value.get<std::string>());
    if (!v) continue;
    raw[*k] += *v;
    recognized = true;
  }
  if (!recognized) return {};
  auto dist = clamp_and_normalize(std::move(raw), categories);
  if (!dist) return {StageResult::kRejected, std::nullopt};
  return {StageResult::kAccepted, std::move(dist)};
}

inline Stage emotion_list_stage(std::string_view text, const CategoryMatcher& matcher) {
  for (const auto& content : bracket_lists(text)) {
    auto items = split_items(content);
    if (items.empty()) continue;
    bool textual = std::all_of(items.begin(), items.end(), [](const std::string& item) {
      return !parse_number(item) && std::any_of(item.begin(), item.end(), [](unsigned char c) {
        return std::isalpha(c) != 0;
      });
    });
    if (!textual) continue;
    std::vector<std::size_t> matched;
    for (const auto& item : items) {
      if (auto k = matcher.match(item);
          k && std::find(matched.begin(), matched.end(), *k) == matched.end()) {
        matched.push_back(*k);
      }
    }
    if (matched.empty()) continue;
    return {StageResult::kAccepted, uniform_over(matched, matcher.categories())};
  }
  return {};
}

inline Stage float_list_stage(std::string_view text, const CategorySet& categories) {
  for (const auto& content : bracket_lists(text)) {
    auto values = numbers_in_list(content);
    if (values.empty()) continue;
    if (values.size() < 2) return {StageResult::kRejected, std::nullopt};
    values.resize(categories.size(), 0.0);
    auto dist = clamp_and_normalize(std::move(values), categories);
    if (!dist) return {StageResult::kRejected, std::nullopt};
    return {StageResult::kAccepted, std::move(dist)};
  }
  return {};
}

inline Stage keyword_stage(std::string_view text, const CategoryMatcher& matcher) {
  auto hits = matcher.mentions(text);
  if (hits.empty()) return {};
  return {StageResult::kAccepted, uniform_over(hits, matcher.categories())};
}

}  // namespace detail

/// Runs the parsing cascade: json-dict, emotion-list, float-list,
/// keyword-match. The first stage that recognizes its shape decides the
/// outcome. Never throws on malformed text.
inline ParseOutcome parse_output(std::string_view raw, const CategoryMatcher& matcher) {
  ParseOutcome outcome;
  outcome.raw_text = std::string(raw);
  const std::string text = detail::strip_code_fences(raw);

  auto finish = [&](detail::Stage stage, ParseStrategy strategy) -> bool {
    if (stage.result == detail::StageResult::kNoMatch) return false;
    if (stage.result == detail::StageResult::kAccepted) {
      outcome.distribution = std::move(stage.distribution);
      outcome.strategy_used = strategy;
    }
    return true;
  };

  if (finish(detail::json_dict_stage(text, matcher), ParseStrategy::kJsonDict)) return outcome;
  if (finish(detail::emotion_list_stage(text, matcher), ParseStrategy::kEmotionList)) return outcome;
  if (finish(detail::float_list_stage(text, matcher.categories()), ParseStrategy::kFloatList)) return outcome;
  finish(detail::keyword_stage(text, matcher), ParseStrategy::kKeywordMatch);
  return outcome;
}

inline ParseOutcome parse_output(std::string_view raw, const CategorySet& categories) {
  return parse_output(raw, CategoryMatcher(categories));
}

/// First decimal literal in the reply, clamped to [0, 1].
inline double parse_verifier_score(std::string_view raw) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(raw[i]);
    bool starts_number = std::isdigit(c) ||
                         (c == '.' && i + 1 < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i + 1])));
    if (!starts_number) continue;
    // A minus sign counts only when it is not glued to a preceding word.
    std::size_t begin = i;
    if (i > 0 && raw[i - 1] == '-' &&
        (i == 1 || !std::isalnum(static_cast<unsigned char>(raw[i - 2])))) {
      begin = i - 1;
    }
    std::string buf(raw.substr(begin, 64));
    double v = std::strtod(buf.c_str(), nullptr);
    if (!std::isfinite(v)) break;
    return std::clamp(v, 0.0, 1.0);
  }
  throw Error(ErrorCode::kNoNumberFound, "no number in verifier reply");
}

}  // namespace emobench
