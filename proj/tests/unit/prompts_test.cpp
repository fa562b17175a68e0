#include <gtest/gtest.h>

#include "iimmr/prompts.hpp"
#include "test_util.hpp"

using namespace iimmr;

namespace {

PromptContext full_context() {
  PromptContext c;
  c.question = "What is the surfer wearing?";
  c.answer_hint = "purple";
  c.gold_answer = "wetsuit";
  c.caption = "The surfer is wearing a wetsuit.";
  c.sentence = "The bottle is in the fridge.";
  c.captions = std::vector<std::string>{"A wetsuit is a garment.", "Neoprene is a rubber."};
  c.bridge_entity = "wetsuit";
  return c;
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(BuildPrompt, AnswerTriggerEndsWithTrigger) {
  PromptContext c;
  c.question = "Who was president?";
  c.caption = "The portrait shows Roosevelt.";
  auto p = build_prompt(PromptKind::AnswerTrigger, c);
  EXPECT_TRUE(text::ends_with(p, "Therefore, short answer:"));
  EXPECT_NE(p.find(*c.caption), std::string::npos);
}

TEST(BuildPrompt, ApCoTPresentsHintAsPossibleAnswer) {
  PromptContext c;
  c.question = "What color is the flower?";
  c.answer_hint = "purple";
  auto p = build_prompt(PromptKind::ApCoT, c);
  EXPECT_NE(p.find("What color is the flower?"), std::string::npos);
  EXPECT_NE(p.find("A possible answer is: purple."), std::string::npos);
}

TEST(BuildPrompt, BaselineCotElicitsSteps) {
  PromptContext c;
  c.question = "q?";
  EXPECT_NE(build_prompt(PromptKind::BaselineCoT, c).find("Let's think step by step"), std::string::npos);
}

TEST(BuildPrompt, MissingFieldNamesKindAndField) {
  auto c = full_context();
  c.bridge_entity.reset();
  try {
    build_prompt(PromptKind::Augmentation, c);
    FAIL();
  } catch (const PreconditionError& e) {
    std::string w = e.what();
    EXPECT_NE(w.find("bridge_entity"), std::string::npos);
    EXPECT_NE(w.find("augmentation"), std::string::npos);
  }
  c = full_context();
  c.captions = std::vector<std::string>{};
  EXPECT_THROW(build_prompt(PromptKind::Augmentation, c), PreconditionError);
  c = full_context();
  c.question = "   ";
  EXPECT_THROW(build_prompt(PromptKind::DirectAnswer, c), PreconditionError);
}

TEST(BuildPrompt, EveryKindFillsEverySlotVerbatim) {
  auto c = full_context();
  c.question = "Odd {question} text?";  // braces in values are not rescanned
  for (auto k : kAllPromptKinds) {
    auto p = build_prompt(k, c);
    for (const auto& f : required_fields(k)) {
      EXPECT_NE(p.find(*detail::field_value(c, f)), std::string::npos) << to_string(k) << " lacks " << f;
    }
    for (auto slot : detail::slot_names()) {
      if (slot == "question") continue;
      EXPECT_EQ(p.find("{" + std::string(slot) + "}"), std::string::npos) << to_string(k);
    }
    EXPECT_EQ(p, build_prompt(k, c)) << "rendering must be pure";
  }
}

TEST(BuildPrompt, AugmentationInterleavesFiveSevenPartExamplesBeforeTarget) {
  auto few = default_few_shot(PromptKind::Augmentation);
  ASSERT_EQ(few.size(), 5u);
  for (const auto& ex : few) {
    ASSERT_EQ(ex.parts.size(), 7u);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(ex.parts[i].first, augmentation_part_names()[i]);
  }
  auto p = build_prompt(PromptKind::Augmentation, full_context());
  EXPECT_EQ(count(p, "Complex Question:"), 6u);  // 5 examples + the open target slot
  EXPECT_EQ(count(p, "\nShort Answer:"), 5u);
  EXPECT_LT(p.rfind("\nShort Answer:"), p.find("Captions: A wetsuit is a garment. Neoprene"));
  EXPECT_TRUE(text::ends_with(p, "Complex Question:"));
}

TEST(BuildPrompt, AugmentationRejectsIncompleteExamples) {
  auto c = full_context();
  c.few_shot = {FewShotExample{{{"Task", "t"}, {"Original Question", "q"}}}};
  EXPECT_THROW(build_prompt(PromptKind::Augmentation, c), PreconditionError);
}

TEST(BuildPrompt, TripletFewShotIncludesBuddyHield) {
  auto few = default_few_shot(PromptKind::TripletExtraction);
  EXPECT_EQ(few.size(), 3u);
  auto p = build_prompt(PromptKind::TripletExtraction, full_context());
  EXPECT_NE(p.find("(Buddy Hield, PlayFor, Sacramento Kings)"), std::string::npos);
  EXPECT_TRUE(text::ends_with(p, "Caption: The surfer is wearing a wetsuit.\nTriplets:"));
}

TEST(Templates, ParseErrors) {
  EXPECT_THROW(detail::parse_template("{nope}", "t"), ParseError);
  EXPECT_THROW(detail::parse_template("{question", "t"), ParseError);
  EXPECT_THROW(detail::parse_template("a } b", "t"), ParseError);
  auto pieces = detail::parse_template("{{literal}} {question}", "t");
  ASSERT_EQ(pieces.size(), 2u);
  EXPECT_EQ(pieces[0].text, "{literal} ");
}

TEST(Templates, TriggerTemplateMustEndWithTrigger) {
  auto set = TemplateSet::defaults();
  set.set(PromptKind::AnswerTrigger, "Question: {question}\n{caption}\nSo:");
  PromptContext c;
  c.question = "q";
  c.caption = "c";
  EXPECT_THROW(build_prompt(PromptKind::AnswerTrigger, c, set), PreconditionError);
}

TEST(Templates, ShippedDirectoryMatchesDefaults) {
  auto dir = fs::path(IIMMR_SOURCE_ROOT) / "templates";
  auto shipped = TemplateSet::load_dir(dir);
  auto defaults = TemplateSet::defaults();
  for (auto k : kAllPromptKinds) EXPECT_EQ(shipped.get(k), defaults.get(k)) << to_string(k);
  EXPECT_EQ(shipped.manifest(), defaults.manifest());
  EXPECT_TRUE(read_json_file(dir / "manifest.json").at("approximation").get<bool>());
}

TEST(Templates, WriteLoadRoundTripAndMissingFile) {
  testkit::TempDir dir;
  auto set = TemplateSet::defaults();
  set.set(PromptKind::DirectAnswer, "Q: {question}\nA:");
  set.write_dir(dir.path());
  auto back = TemplateSet::load_dir(dir.path());
  EXPECT_EQ(back.get(PromptKind::DirectAnswer), "Q: {question}\nA:");
  EXPECT_EQ(back.hash(PromptKind::DirectAnswer), sha256_hex("Q: {question}\nA:"));
  fs::remove(dir / "apcot.txt");
  EXPECT_THROW(TemplateSet::load_dir(dir.path()), ParseError);
}

TEST(ExtractShortAnswer, PostProcessingRules) {
  EXPECT_EQ(extract_short_answer("no"), "no");
  EXPECT_EQ(extract_short_answer("Answer: no"), "no");
  EXPECT_EQ(extract_short_answer("  Short answer:  roosevelt \nBecause..."), "roosevelt");
  EXPECT_EQ(extract_short_answer("\n\n  yellow\nmore"), "yellow");
  EXPECT_EQ(extract_short_answer(""), "");
  EXPECT_EQ(extract_short_answer("   \n "), "");
}
