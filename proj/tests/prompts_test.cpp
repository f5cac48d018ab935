#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "emobench/emobench.hpp"
#include "synthetic.hpp"

using namespace emobench;

namespace {

const CategorySet kIemocap = synth::iemocap_categories();
const CategorySet kCrema = synth::crema_categories();

AnnotatedUtterance utterance(std::optional<std::string> transcript = "I can't believe you did that.") {
  AnnotatedUtterance u;
  u.utterance_id = "Ses01F_impro01_F000";
  u.audio_path = "a.wav";
  u.transcript = std::move(transcript);
  u.rater_labels = {{"Anger"}};
  return u;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST(PredictionPrompt, BaseCarriesOrderedCategoryListAndConstraints) {
  auto p = build_prediction_prompt(utterance(), kIemocap, PromptKind::kBase, PromptVariant::kUtterance);
  EXPECT_TRUE(contains(p, "['Neutral state', 'Happiness', 'Anger', 'Sadness']"));
  EXPECT_TRUE(contains(p, "Predict the probability distribution of emotions for the target utterance"));
  EXPECT_TRUE(contains(p, "Two speakers are having a conversation."));
  EXPECT_TRUE(contains(p, "Target Utterance:\nI can't believe you did that."));
  EXPECT_TRUE(contains(p, "Sum of probabilities must equal to 1.0"));
  EXPECT_TRUE(contains(p, R"({"Neutral state":float, "Happiness":float, "Anger":float, "Sadness":float})"));
  EXPECT_FALSE(contains(p, "CoT Instructions"));
}

TEST(PredictionPrompt, AudioVariantDropsTranscriptSection) {
  auto u = utterance(std::nullopt);
  auto p = build_prediction_prompt(u, kCrema, PromptKind::kBase, PromptVariant::kAudio);
  EXPECT_TRUE(contains(p, "Predict the probability distribution of emotions for the audio"));
  EXPECT_FALSE(contains(p, "Target Utterance"));
  EXPECT_TRUE(contains(p, "['Anger', 'Disgust', 'Fear', 'Happy', 'Neutral', 'Sad']"));
}

TEST(PredictionPrompt, MissingTranscriptForUtteranceVariant) {
  try {
    build_prediction_prompt(utterance(std::nullopt), kIemocap, PromptKind::kBase, PromptVariant::kUtterance);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingTranscript);
  }
}

TEST(PredictionPrompt, CotDiffersOnlyByInstructionBlock) {
  auto base = build_prediction_prompt(utterance(), kIemocap, PromptKind::kBase, PromptVariant::kUtterance);
  auto cot = build_prediction_prompt(utterance(), kIemocap, PromptKind::kCot, PromptVariant::kUtterance);
  std::string block = "CoT Instructions:\n" + std::string(prompt_defaults::kCot) + "\n\n";
  auto at = cot.find(block);
  ASSERT_NE(at, std::string::npos);
  EXPECT_EQ(cot.substr(0, at) + cot.substr(at + block.size()), base);
  EXPECT_TRUE(contains(cot, "First, carefully listen to the tone, intonation"));
}

TEST(PredictionPrompt, DeterministicAndRoundTripsCategories) {
  auto a = build_prediction_prompt(utterance(), kCrema, PromptKind::kCot, PromptVariant::kUtterance);
  auto b = build_prediction_prompt(utterance(), kCrema, PromptKind::kCot, PromptVariant::kUtterance);
  EXPECT_EQ(a, b);
  std::size_t pos = a.find("['");
  for (const auto& name : kCrema.names()) {
    auto next = a.find("'" + name + "'", pos);
    ASSERT_NE(next, std::string::npos) << name;
    pos = next;
  }
}

TEST(PredictionPrompt, SectionOrder) {
  auto p = build_prediction_prompt(utterance(), kIemocap, PromptKind::kCot, PromptVariant::kUtterance);
  auto order = {"Background:", "Target Utterance:", "Task:", "CoT Instructions:", "Output Constraints:"};
  std::size_t last = 0;
  for (const char* title : order) {
    auto at = p.find(title);
    ASSERT_NE(at, std::string::npos) << title;
    EXPECT_GE(at, last) << title;
    last = at;
  }
}

TEST(VerifierPrompt, EmbedsCandidateAndGuideVerbatim) {
  std::string candidate = R"({"Anger": 0.1, "Happy": 0.5, "Sad": 0.4})";
  auto p = build_verifier_prompt(utterance(), candidate, kIemocap);
  EXPECT_TRUE(contains(p, "Model Output:\n" + candidate));
  EXPECT_TRUE(contains(p, "You are evaluating a model's prediction"));
  EXPECT_TRUE(contains(p, "Only scoring based on emotion content"));
  EXPECT_TRUE(contains(p, "0.0–0.3: Clearly wrong or unrelated"));
  EXPECT_TRUE(contains(p, "0.4–0.7"));
  EXPECT_TRUE(contains(p, "0.8–1.0"));
  EXPECT_TRUE(p.ends_with("Reply ONLY with a number between 0.0 and 1.0."));
  EXPECT_TRUE(contains(p, "Role:\nUser"));
  EXPECT_TRUE(contains(p, "['Neutral state', 'Happiness', 'Anger', 'Sadness']"));
}

TEST(VerifierPrompt, RejectsEmptyCandidate) { EXPECT_THROW(build_verifier_prompt(utterance(), "", kIemocap), Error); }

TEST(PromptBook, TemplateFileOverridesSections) {
  std::istringstream in(
      "[background]\nA call-center conversation.\n"
      "[task]\nRate {subject} over {categories} only.\n"
      "[verifier.guide]\nAnswer with one number.\n");
  auto book = PromptBook::from_stream(in);
  auto p = build_prediction_prompt(utterance(), kIemocap, PromptKind::kCot, PromptVariant::kUtterance, book);
  EXPECT_TRUE(contains(p, "Background:\nA call-center conversation."));
  EXPECT_TRUE(contains(p, "Rate the target utterance over ['Neutral state', 'Happiness', 'Anger', 'Sadness'] only."));
  EXPECT_TRUE(contains(p, "CoT Instructions:"));
  EXPECT_TRUE(contains(p, "Sum of probabilities must equal to 1.0"));
  auto v = build_verifier_prompt(utterance(), "{}", kIemocap, PromptVariant::kUtterance, book);
  EXPECT_TRUE(contains(v, "Scoring Guide:\nAnswer with one number."));
}

TEST(PromptBook, UnknownSectionIsConfigError) {
  std::istringstream in("[footer]\nbye\n");
  EXPECT_THROW(PromptBook::from_stream(in), Error);
}

TEST(FillPlaceholders, SinglePassLeavesUnknownAlone) {
  std::map<std::string, std::string> values{{"a", "{b}"}, {"b", "x"}};
  EXPECT_EQ(fill_placeholders("{a} {b} {c}", values), "{b} x {c}");
}
