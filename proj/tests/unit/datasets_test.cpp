#include <gtest/gtest.h>

#include "iimmr/datasets.hpp"
#include "test_util.hpp"

using namespace iimmr;

TEST(LoadGqa, TruckRecord) {
  auto r = load_gqa_json(json::parse(R"({"q1": {"question": "Is this a truck?", "answer": "no", "imageId": "n1"}})"),
                         Split::Val);
  ASSERT_EQ(r.items.size(), 1u);
  const auto& it = r.items[0];
  EXPECT_EQ(it.dataset, Dataset::GQA);
  EXPECT_EQ(it.gold_answers, std::vector<std::string>{"no"});
  EXPECT_EQ(it.image_id, "n1");
  EXPECT_FALSE(it.semantic_program.has_value());
  EXPECT_TRUE(r.report.errors.empty());
}

TEST(LoadGqa, EmptyMap) {
  auto r = load_gqa_json(json::object(), Split::TestDev);
  EXPECT_TRUE(r.items.empty());
  EXPECT_EQ(r.report.split, Split::TestDev);
}

TEST(LoadGqa, MissingAnswerSkipsItemWithOneError) {
  auto r = load_gqa_json(json::parse(R"({
    "q1": {"question": "Is this a truck?", "imageId": "n1"},
    "q2": {"question": "What color is the banana?", "answer": "yellow", "imageId": "n2"}})"),
                         Split::Val);
  ASSERT_EQ(r.items.size(), 1u);
  EXPECT_EQ(r.items[0].id, "q2");
  ASSERT_EQ(r.report.errors.size(), 1u);
  EXPECT_EQ(r.report.errors[0].record_id, "q1");
  EXPECT_NE(r.report.errors[0].message.find("answer"), std::string::npos);
}

TEST(LoadGqa, MalformedRecordNamesTheId) {
  try {
    load_gqa_json(json::parse(R"({"bad7": [1, 2]})"), Split::Val);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("bad7"), std::string::npos);
  }
  EXPECT_THROW(load_gqa_json(json::array(), Split::Val), ParseError);
}

TEST(LoadGqa, SemanticProgramAndOrdering) {
  auto r = load_gqa(testkit::fixture("gqa_programs.json"), Split::Val);
  ASSERT_EQ(r.items.size(), 20u);
  for (std::size_t i = 1; i < r.items.size(); ++i) EXPECT_LT(r.items[i - 1].id, r.items[i].id);
  const auto& g02 = r.items[1];
  ASSERT_TRUE(g02.semantic_program);
  ASSERT_EQ(g02.semantic_program->ops.size(), 2u);
  EXPECT_EQ(g02.semantic_program->ops[1].operation, "query");
  EXPECT_EQ(g02.semantic_program->ops[1].dependencies, std::vector<std::size_t>{0});
}

TEST(LoadGqa, ForwardDependencyIsAReportedError) {
  auto r = load_gqa_json(json::parse(R"({"q": {"question": "x?", "answer": "y", "imageId": "i",
      "semantic": [{"operation": "select", "argument": "a", "dependencies": [1]},
                   {"operation": "query", "argument": "name", "dependencies": [0]}]}})"),
                         Split::Val);
  EXPECT_TRUE(r.items.empty());
  ASSERT_EQ(r.report.errors.size(), 1u);
}

TEST(LoadGqa, DeterministicAcrossLoads) {
  auto a = load_gqa(testkit::fixture("gqa_programs.json"), Split::Val).items;
  auto b = load_gqa(testkit::fixture("gqa_programs.json"), Split::Val).items;
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].question, b[i].question);
  }
}

TEST(LoadAokvqa, TenAnswers) {
  auto r = load_aokvqa_json(json::parse(R"([{"question_id": "a", "image_id": "i", "question": "q?",
      "direct_answers": ["green","green","green","green","green","green","green","green","green","green"]}])"),
                            Split::Val);
  ASSERT_EQ(r.items.size(), 1u);
  EXPECT_EQ(r.items[0].gold_answers.size(), 10u);
  EXPECT_EQ(r.items[0].dataset, Dataset::AOKVQA);
  EXPECT_TRUE(r.report.flagged.empty());
}

TEST(LoadAokvqa, NineAnswersPaddedWithModalAndFlagged) {
  auto r = load_aokvqa_json(json::parse(R"([{"question_id": "a", "image_id": "i", "question": "q?",
      "direct_answers": ["red","blue","blue","red","blue","green","red","blue","x"]}])"),
                            Split::Val);
  ASSERT_EQ(r.items.size(), 1u);
  const auto& g = r.items[0].gold_answers;
  ASSERT_EQ(g.size(), 10u);
  EXPECT_EQ(g.back(), "blue");
  EXPECT_EQ(std::count(g.begin(), g.end(), "blue"), 5);
  ASSERT_EQ(r.report.flagged.size(), 1u);
  EXPECT_EQ(r.report.flagged[0].record_id, "a");
}

TEST(LoadAokvqa, ElevenAnswersTruncatedByFrequency) {
  auto r = load_aokvqa_json(json::parse(R"([{"question_id": "a", "image_id": "i", "question": "q?",
      "direct_answers": ["x","b","b","b","c","c","a","a","a","a","b"]}])"),
                            Split::Val);
  ASSERT_EQ(r.items.size(), 1u);
  const auto& g = r.items[0].gold_answers;
  ASSERT_EQ(g.size(), 10u);
  EXPECT_EQ(std::count(g.begin(), g.end(), "x"), 0);  // the rarest goes
  EXPECT_EQ(std::count(g.begin(), g.end(), "b"), 4);
  EXPECT_EQ(r.items[0].primary_answer(), "b");  // ties broken by first occurrence
  EXPECT_EQ(r.report.flagged.size(), 1u);
}

TEST(LoadAokvqa, EmptyListAndMissingAnswers) {
  EXPECT_TRUE(load_aokvqa_json(json::array(), Split::Val).items.empty());
  auto r = load_aokvqa_json(json::parse(R"([{"question_id": "a", "image_id": "i", "question": "q?"}])"), Split::Val);
  EXPECT_TRUE(r.items.empty());
  ASSERT_EQ(r.report.errors.size(), 1u);
  EXPECT_NE(r.report.errors[0].message.find("direct_answers"), std::string::npos);
  EXPECT_THROW(load_aokvqa_json(json::object(), Split::Val), ParseError);
}

TEST(QAItemInvariants, Checked) {
  QAItem g{"x", "q?", "i", {"a", "b"}, Dataset::GQA, std::nullopt};
  EXPECT_THROW(g.validate(), PreconditionError);
  QAItem a{"y", "q?", "i", {"a"}, Dataset::AOKVQA, std::nullopt};
  EXPECT_THROW(a.validate(), PreconditionError);
  QAItem e{"z", "  ", "i", {"a"}, Dataset::GQA, std::nullopt};
  EXPECT_THROW(e.validate(), PreconditionError);
}

namespace {
json fig4_detections() {
  return json::parse(R"([{"image_id": "i1", "objects": [{"label": "bottle", "score": 0.9},
                                                         {"label": "fridge", "score": 0.8, "bbox": [1, 2, 30, 40]}]}])");
}
}  // namespace

TEST(LoadDetections, ThresholdKeepsBoth) {
  auto idx = load_detections_json(fig4_detections(), 0.5);
  const auto& d = idx.for_image("i1");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].term.str(), "bottle");
  EXPECT_EQ(d[1].term.str(), "fridge");
  ASSERT_TRUE(d[1].bbox);
  EXPECT_EQ((*d[1].bbox)[3], 40.0);
}

TEST(LoadDetections, HighThresholdLeavesEmptyEntry) {
  auto idx = load_detections_json(fig4_detections(), 0.95);
  EXPECT_TRUE(idx.contains("i1"));
  EXPECT_TRUE(idx.for_image("i1").empty());
  EXPECT_TRUE(idx.for_image("unknown").empty());
}

TEST(LoadDetections, OutOfRangeScoreAndThreshold) {
  EXPECT_THROW(load_detections_json(json::parse(R"([{"image_id": "i", "objects": [{"label": "a", "score": 1.3}]}])"), 0.5),
               ParseError);
  EXPECT_THROW(load_detections_json(fig4_detections(), 1.5), PreconditionError);
  EXPECT_THROW(load_detections_json(fig4_detections(), -0.1), PreconditionError);
  EXPECT_THROW(load_detections_json(json::parse(R"([{"image_id": "i", "objects": [{"label": "!!", "score": 0.5}]}])"), 0.5),
               ParseError);
}

TEST(LoadDetections, ThresholdExtremes) {
  testkit::Gen g(3);
  for (int round = 0; round < 50; ++round) {
    json objs = json::array();
    std::size_t ones = 0, n = 1 + g.below(10);
    for (std::size_t k = 0; k < n; ++k) {
      double s = g.coin(0.2) ? 1.0 : static_cast<double>(g.below(1000)) / 1000.0;
      ones += s == 1.0;
      objs.push_back(json{{"label", g.word(2)}, {"score", s}});
    }
    json doc = json::array({{{"image_id", "i"}, {"objects", objs}}});
    EXPECT_EQ(load_detections_json(doc, 0.0).for_image("i").size(), n);
    EXPECT_EQ(load_detections_json(doc, 1.0).for_image("i").size(), ones);
  }
}

TEST(SnippetStore, LoadsAndNormalizesKeys) {
  auto store = load_snippet_store(testkit::fixture("aug_store.jsonl"));
  EXPECT_EQ(store.lookup("Wetsuits").size(), 2u);
  EXPECT_EQ(store.lookup("wetsuit")[0].source_id, "wiki:Wetsuit");
  EXPECT_TRUE(store.lookup("xylophone").empty());
  SnippetStore s;
  EXPECT_THROW(s.add("k", {"   ", "src"}), ParseError);
}
