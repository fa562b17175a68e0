#include <gtest/gtest.h>

#include "iimmr/metrics.hpp"
#include "test_util.hpp"

using namespace iimmr;

namespace {

// Leave-one-out definition evaluated literally: each subset scores
// min(hits, 3) / 3, averaged over the ten subsets.
double aokvqa_brute_force(const std::string& pred, const std::vector<std::string>& gold) {
  int thirds = 0;
  for (std::size_t drop = 0; drop < gold.size(); ++drop) {
    int hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (i != drop && normalize_answer(gold[i]) == normalize_answer(pred)) ++hits;
    }
    thirds += std::min(hits, 3);
  }
  return thirds / (3.0 * static_cast<double>(gold.size()));
}

std::vector<std::string> gold_with(int k, const std::string& hit = "yes", const std::string& miss = "no") {
  std::vector<std::string> g(10, miss);
  for (int i = 0; i < k; ++i) g[i] = hit;
  return g;
}

QAItem gqa(std::string id, std::string answer) {
  return QAItem{std::move(id), "q?", "img", {std::move(answer)}, Dataset::GQA, std::nullopt};
}

ReasoningPath triplet_path(std::vector<std::array<std::string, 3>> ts, std::string id = "p") {
  ReasoningPath p;
  p.item_id = std::move(id);
  p.source = PathSource::KtPrompt;
  for (const auto& t : ts) p.steps.emplace_back(TripletStep{KnowledgeTriplet::make(t[0], t[1], t[2])});
  return p;
}

}  // namespace

TEST(NormalizeAnswer, Examples) {
  EXPECT_EQ(normalize_answer("The Giraffe."), "giraffe");
  EXPECT_EQ(normalize_answer("  A   red,  car "), "red car");
  EXPECT_EQ(normalize_answer("3.5"), "3.5");
  EXPECT_EQ(normalize_answer("1,000 people"), "1,000 people");
  EXPECT_EQ(normalize_answer("Don't"), "dont");
  EXPECT_EQ(normalize_answer(""), "");
}

TEST(NormalizeAnswer, Idempotent) {
  testkit::Gen g(31);
  for (int i = 0; i < 5000; ++i) {
    auto s = g.noisy_text(30);
    auto once = normalize_answer(s);
    ASSERT_EQ(normalize_answer(once), once) << "[" << s << "]";
  }
}

TEST(GqaAccuracy, ExactAfterNormalization) {
  EXPECT_EQ(gqa_accuracy("No", "no"), 1);
  EXPECT_EQ(gqa_accuracy("the table.", "table"), 1);
  EXPECT_EQ(gqa_accuracy("tables", "table"), 0);
  EXPECT_EQ(gqa_accuracy("", "table"), 0);
}

TEST(AokvqaAccuracy, ClosedFormEqualsBruteForceForEveryCount) {
  for (int k = 0; k <= 10; ++k) {
    auto g = gold_with(k);
    EXPECT_EQ(aokvqa_accuracy("yes", g), aokvqa_brute_force("yes", g)) << "k=" << k;
  }
  EXPECT_DOUBLE_EQ(aokvqa_accuracy("yes", gold_with(0)), 0.0);
  EXPECT_DOUBLE_EQ(aokvqa_accuracy("yes", gold_with(1)), 0.3);
  EXPECT_DOUBLE_EQ(aokvqa_accuracy("yes", gold_with(2)), 0.6);
  EXPECT_DOUBLE_EQ(aokvqa_accuracy("yes", gold_with(3)), 0.9);
  EXPECT_DOUBLE_EQ(aokvqa_accuracy("yes", gold_with(4)), 1.0);
  EXPECT_DOUBLE_EQ(aokvqa_accuracy("yes", gold_with(10)), 1.0);
}

TEST(AokvqaAccuracy, MonotoneInMatchesAndBounded) {
  testkit::Gen g(37);
  const std::vector<std::string> vocab = {"red", "Red.", "blue", "the red", "green"};
  for (int round = 0; round < 3000; ++round) {
    std::vector<std::string> gold;
    for (int i = 0; i < 10; ++i) gold.push_back(g.pick(vocab));
    auto pred = g.pick(vocab);
    double a = aokvqa_accuracy(pred, gold);
    ASSERT_NEAR(a, aokvqa_brute_force(pred, gold), 1e-12);
    ASSERT_GE(a, 0.0);
    ASSERT_LE(a, 1.0);
    auto more = gold;
    auto slot = g.below(10);
    more[slot] = pred;
    ASSERT_GE(aokvqa_accuracy(pred, more), a);
  }
}

TEST(AokvqaAccuracy, NeedsTenAnswers) {
  EXPECT_THROW(aokvqa_accuracy("x", std::vector<std::string>(9, "x")), PreconditionError);
  EXPECT_THROW(aokvqa_accuracy("x", std::vector<std::string>(11, "x")), PreconditionError);
}

TEST(AokvqaAccuracy, NormalizationCanBeDisabled) {
  auto g = gold_with(3, "Red");
  EXPECT_DOUBLE_EQ(aokvqa_accuracy("red", g), 0.9);
  EXPECT_DOUBLE_EQ(aokvqa_accuracy("red", g, false), 0.0);
}

TEST(TripletMatch, StrictAndPartial) {
  auto a = KnowledgeTriplet::make("surfer", "wearing", "wetsuit");
  auto b = KnowledgeTriplet::make("Surfers", "wearing", "wetsuit");
  auto c = KnowledgeTriplet::make("surfer", "has", "wetsuit");
  auto d = KnowledgeTriplet::make("wetsuit", "wearing", "surfer");
  EXPECT_TRUE(triplet_match(a, b, MatchMode::Strict));
  EXPECT_FALSE(triplet_match(a, c, MatchMode::Strict));
  EXPECT_TRUE(triplet_match(a, c, MatchMode::Partial));
  EXPECT_FALSE(triplet_match(a, d, MatchMode::Partial));  // positional
}

TEST(PathMatch, BijectionAndLength) {
  auto gold = triplet_path({{"man", "holding", "object"}, {"object", "name", "umbrella"}});
  auto swapped = triplet_path({{"object", "name", "umbrella"}, {"man", "holding", "object"}});
  EXPECT_TRUE(path_match(swapped, gold, MatchMode::Strict));
  auto near = triplet_path({{"object", "name", "umbrella"}, {"man", "carrying", "object"}});
  EXPECT_FALSE(path_match(near, gold, MatchMode::Strict));
  EXPECT_TRUE(path_match(near, gold, MatchMode::Partial));
  auto shorter = triplet_path({{"man", "holding", "object"}});
  EXPECT_FALSE(path_match(shorter, gold, MatchMode::Partial));
  // Two predictions may not share one gold triplet.
  auto dup = triplet_path({{"man", "holding", "object"}, {"man", "holding", "object"}});
  EXPECT_FALSE(path_match(dup, gold, MatchMode::Strict));
  EXPECT_TRUE(path_match(triplet_path({}), triplet_path({}), MatchMode::Strict));

  ReasoningPath sentences;
  sentences.steps.emplace_back(SentenceStep{"x.", std::nullopt});
  EXPECT_THROW(path_match(sentences, gold, MatchMode::Strict), PreconditionError);
  std::vector<std::array<std::string, 3>> seven(7, {"a", "b", "c"});
  EXPECT_THROW(path_match(triplet_path(seven), triplet_path(seven), MatchMode::Strict), PreconditionError);
}

TEST(PathMatch, StrictImpliesPartialOnRandomPaths) {
  testkit::Gen g(41);
  const std::vector<std::string> pool = {"man", "object", "name", "on", "table", "cat"};
  auto rand_path = [&](std::size_t n) {
    std::vector<std::array<std::string, 3>> ts;
    for (std::size_t i = 0; i < n; ++i) ts.push_back({g.pick(pool), g.pick(pool), g.pick(pool)});
    return triplet_path(ts);
  };
  for (int round = 0; round < 3000; ++round) {
    std::size_t n = g.below(4);
    auto a = rand_path(n);
    auto b = g.coin(0.8) ? rand_path(n) : rand_path(g.below(4));
    bool strict = path_match(a, b, MatchMode::Strict);
    bool partial = path_match(a, b, MatchMode::Partial);
    ASSERT_TRUE(!strict || partial);
    ASSERT_EQ(strict, path_match(b, a, MatchMode::Strict));
    ASSERT_TRUE(path_match(a, a, MatchMode::Strict));
  }
}

TEST(EvaluateRun, TwoItemExample) {
  std::vector<QAItem> items = {gqa("q0", "no"), gqa("q1", "yellow")};
  std::vector<Prediction> preds = {{"q0", "No", PredMethod::ApCoT, std::nullopt},
                                   {"q1", "green", PredMethod::ApCoT, std::nullopt}};
  std::map<std::string, HopCount> hops = {{"q0", HopCount::of(0)}, {"q1", HopCount::of(1)}};
  auto r = evaluate_run(preds, items, hops);
  EXPECT_EQ(r.method, "apcot");
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[0].accuracy, std::optional<double>(1.0));
  EXPECT_EQ(r.rows[1].accuracy, std::optional<double>(0.0));
  EXPECT_FALSE(r.rows[2].accuracy);
  EXPECT_DOUBLE_EQ(r.overall, 0.5);
  EXPECT_DOUBLE_EQ(r.rows[0].share, 0.5);
  EXPECT_DOUBLE_EQ(r.rows[1].share, 0.5);
  EXPECT_DOUBLE_EQ(r.rows[2].share, 0.0);
  auto md = render_markdown(r);
  EXPECT_NE(md.find("| apcot Accuracy | 100.00 | 0.00 | — | 50.00 |"), std::string::npos) << md;
  EXPECT_NE(md.find("| Hop Distribution | 50.00 | 50.00 | 0.00 | 100.00 |"), std::string::npos) << md;
}

TEST(EvaluateRun, Preconditions) {
  std::vector<QAItem> items = {gqa("q0", "no")};
  std::map<std::string, HopCount> hops = {{"q0", HopCount::of(0)}};
  EXPECT_THROW(evaluate_run({}, items, hops), PreconditionError);
  EXPECT_THROW(evaluate_run({{"zz", "no", PredMethod::Direct, {}}}, items, hops), PreconditionError);
  EXPECT_THROW(evaluate_run({{"q0", "no", PredMethod::Direct, {}}, {"q0", "no", PredMethod::Direct, {}}}, items, hops),
               PreconditionError);
  EXPECT_THROW(evaluate_run({{"q0", "no", PredMethod::Direct, {}}}, items, {}), PreconditionError);
}

TEST(EvaluateRun, BucketIdentitiesOnRandomRuns) {
  testkit::Gen g(43);
  for (int round = 0; round < 300; ++round) {
    std::vector<QAItem> items;
    std::vector<Prediction> preds;
    std::map<std::string, HopCount> hops;
    std::map<std::string, ReasoningType> types;
    std::size_t n = 1 + g.below(40);
    for (std::size_t i = 0; i < n; ++i) {
      auto id = "i" + std::to_string(i);
      if (g.coin()) {
        items.push_back(gqa(id, g.pick<std::string>({"yes", "no"})));
      } else {
        std::vector<std::string> gold;
        for (int k = 0; k < 10; ++k) gold.push_back(g.pick<std::string>({"a1", "a2", "a3"}));
        items.push_back(QAItem{id, "q?", "img", gold, Dataset::AOKVQA, std::nullopt});
      }
      preds.push_back({id, g.pick<std::string>({"yes", "no", "a1", "a2"}), PredMethod::KtPrompt, {}});
      hops[id] = HopCount::of(g.below(4));
      if (g.coin(0.7)) types[id] = g.coin() ? ReasoningType::Visual : ReasoningType::BeyondVisual;
    }
    auto r = evaluate_run(preds, items, hops, &types);
    double share = 0.0, weighted = 0.0;
    std::size_t count = 0;
    for (const auto& row : r.rows) {
      share += row.share;
      count += row.count;
      if (row.accuracy) weighted += *row.accuracy * static_cast<double>(row.count);
      ASSERT_EQ(row.accuracy.has_value(), row.count > 0);
    }
    ASSERT_EQ(count, r.total);
    ASSERT_NEAR(share, 1.0, 1e-9);
    ASSERT_NEAR(weighted / static_cast<double>(r.total), r.overall, 1e-9);
    for (const auto& t : r.types) {
      if (t.typed) {
        ASSERT_NEAR(*t.visual + *t.beyond_visual, 1.0, 1e-9);
      }
    }
    // Perfect hop predictions score 1 everywhere.
    auto hp = hop_prediction_report(hops, hops);
    ASSERT_DOUBLE_EQ(hp.overall, 1.0);
  }
}

TEST(HopPrediction, ExampleAndKeyMismatch) {
  std::map<std::string, HopCount> gold = {{"a", HopCount::of(1)}, {"b", HopCount::of(3)}, {"c", HopCount::of(0)}};
  std::map<std::string, HopCount> pred = {{"a", HopCount::of(1)}, {"b", HopCount::of(2)}, {"c", HopCount::of(0)}};
  auto t = hop_prediction_report(pred, gold);
  EXPECT_EQ(t.rows[0].accuracy, std::optional<double>(1.0));
  EXPECT_EQ(t.rows[1].accuracy, std::optional<double>(1.0));
  EXPECT_EQ(t.rows[2].accuracy, std::optional<double>(0.0));  // 2 vs 3: exact count, not bucket
  EXPECT_NEAR(t.overall, 2.0 / 3.0, 1e-12);
  EXPECT_THROW(hop_prediction_report({{"x", HopCount::of(1)}}, gold), PreconditionError);
}

TEST(PathMatchReport, MissingPredictionIsAMiss) {
  std::map<std::string, ReasoningPath> gold = {{"a", triplet_path({{"cat", "on", "mat"}}, "a")},
                                               {"b", triplet_path({{"dog", "on", "rug"}}, "b")}};
  std::map<std::string, ReasoningPath> pred = {{"a", triplet_path({{"cat", "under", "mat"}}, "a")}};
  auto s = path_match_report(pred, gold);
  EXPECT_EQ(s.pairs, 2u);
  EXPECT_DOUBLE_EQ(s.strict, 0.0);
  EXPECT_DOUBLE_EQ(s.partial, 0.5);
}

TEST(Render, AokvqaHidesEmptyZeroHopColumnAndJsonRoundTrips) {
  EvalReport r;
  r.dataset = Dataset::AOKVQA;
  r.method = "ktprompt";
  r.rows = {{HopBucket::H0, 0, std::nullopt, 0.0}, {HopBucket::H1, 3, 0.5, 0.75}, {HopBucket::H2plus, 1, 1.0, 0.25}};
  r.total = 4;
  r.overall = 0.625;
  r.hop_prediction = HopPredictionTable{r.rows, 4, 0.5};
  r.path_match = PathMatchSummary{4, 0.25, 0.5};
  auto md = render_markdown(r);
  EXPECT_NE(md.find("| Metric | 1-hop | >=2-hop | All |"), std::string::npos) << md;
  EXPECT_NE(md.find("| Model | Strict Matching | Partial Matching |"), std::string::npos);
  EXPECT_NE(md.find("| ktprompt | 25.00 | 50.00 |"), std::string::npos);
  EXPECT_NE(md.find("| Model | 0-hop | 1-hop | >=2-hop | All |"), std::string::npos);

  auto csv = render_csv(r);
  EXPECT_EQ(csv.rfind("table,row,bucket,count,value\n", 0), 0u);
  EXPECT_NE(csv.find("hops,accuracy,0-hop,0,\n"), std::string::npos);
  EXPECT_NE(csv.find("hops,accuracy,all,4,62.5000\n"), std::string::npos);
  for (const auto& row : parse_csv(csv)) EXPECT_EQ(row.size(), 5u);

  auto back = report_from_json(report_to_json(r));
  EXPECT_EQ(report_to_json(back), report_to_json(r));
  EXPECT_EQ(render_markdown(back), md);
  EXPECT_THROW(report_from_json(json::object()), ParseError);
}

TEST(Render, FormatPercent) {
  EXPECT_EQ(format_percent(std::nullopt), "—");
  EXPECT_EQ(format_percent(0.12345), "12.35");
  EXPECT_EQ(format_percent(1.0), "100.00");
}
