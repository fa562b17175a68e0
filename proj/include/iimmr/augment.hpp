#pragma once

// Question augmentation: keyword retrieval, 5-shot rewriting, answer
// preservation checks, and the hop-increase table.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iimmr/analyzer.hpp"
#include "iimmr/datasets.hpp"
#include "iimmr/metrics.hpp"
#include "iimmr/modelio.hpp"
#include "iimmr/prompts.hpp"

namespace iimmr {

/// Keyword search over some snippet collection.
class SnippetSource {
 public:
  virtual ~SnippetSource() = default;
  virtual std::vector<Caption> search(const std::string& keyword, std::size_t limit) = 0;
};

class StoreSnippetSource final : public SnippetSource {
 public:
  explicit StoreSnippetSource(const SnippetStore& store) : store_(store) {}

  std::vector<Caption> search(const std::string& keyword, std::size_t limit) override {
    const auto& hits = store_.lookup(keyword);
    return {hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(std::min(limit, hits.size()))};
  }

 private:
  const SnippetStore& store_;
};

inline constexpr std::size_t kDefaultMaxCaptions = 3;

/// Normalized keywords of the question in prompt output order. With no
/// client the offline heuristic is used. An empty result means the item
/// cannot be augmented.
inline std::vector<std::string> extract_retrieval_keywords(const QAItem& item, ModelClient* client,
                                                           const GenerationOptions& opts = {}) {
  std::vector<NormalizedTerm> terms;
  if (client) {
    PromptContext ctx;
    ctx.sentence = item.question;
    auto resp = client->complete(
        opts.llm(build_prompt(PromptKind::KeywordExtraction, ctx, opts.tpl()), opts.keyword_max_tokens));
    terms = parse_keyword_list(resp.text);
  } else {
    terms = heuristic_keywords(item.question);
  }
  std::vector<std::string> out;
  for (const auto& t : terms) out.push_back(t.str());
  return out;
}

inline std::vector<Caption> retrieve_captions(const std::string& keyword, SnippetSource& source,
                                              std::size_t max_captions = kDefaultMaxCaptions) {
  return source.search(keyword, max_captions);
}

struct AugmentedItem {
  QAItem original;
  std::string bridge_entity;
  std::vector<std::string> captions_used;
  std::string complex_question;
  std::string short_answer;
  bool accepted = false;
  std::optional<std::string> reject_reason;
};

struct RewriteParse {
  std::string complex_question;
  std::string short_answer;
};

/// Reads "Complex Question: ..." (label optional, the prompt ends with it)
/// and "Short Answer: ..." from a rewrite response.
inline std::optional<RewriteParse> parse_rewrite(std::string_view response) {
  std::string question, answer;
  bool in_answer = false, saw_answer = false;
  for (const auto& raw : text::split_lines(response)) {
    auto line = std::string(text::trim(raw));
    if (line.empty()) continue;
    if (text::starts_with_icase(line, "short answer:")) {
      if (saw_answer) break;  // a following few-shot-style block
      answer = std::string(text::trim(std::string_view(line).substr(13)));
      saw_answer = in_answer = true;
      continue;
    }
    if (in_answer) break;
    if (text::starts_with_icase(line, "complex question:"))
      line = std::string(text::trim(std::string_view(line).substr(17)));
    if (!line.empty()) question += (question.empty() ? "" : " ") + line;
  }
  if (question.empty() || answer.empty()) return std::nullopt;
  return RewriteParse{question, answer};
}

/// Issues the 5-shot rewrite prompt and enforces acceptance: the short
/// answer must survive normalization and the question must change.
inline AugmentedItem augment_question(const QAItem& item, const std::vector<Caption>& captions,
                                      const std::string& bridge_entity, ModelClient& client,
                                      const GenerationOptions& opts = {}) {
  if (captions.empty()) throw PreconditionError("augment_question: item " + item.id + " has no captions");
  AugmentedItem out;
  out.original = item;
  out.bridge_entity = bridge_entity;
  for (const auto& c : captions) out.captions_used.push_back(c.text);

  PromptContext ctx;
  ctx.question = item.question;
  ctx.gold_answer = item.primary_answer();
  ctx.captions = out.captions_used;
  ctx.bridge_entity = bridge_entity;
  auto resp = client.complete(
      opts.llm(build_prompt(PromptKind::Augmentation, ctx, opts.tpl()), opts.augment_max_tokens));
  auto parsed = parse_rewrite(resp.text);
  if (!parsed) {
    out.reject_reason = "parse";
    return out;
  }
  out.complex_question = parsed->complex_question;
  out.short_answer = parsed->short_answer;
  if (normalize_answer(out.short_answer) != normalize_answer(item.primary_answer())) {
    out.reject_reason = "answer changed";
  } else if (normalize_answer(out.complex_question) == normalize_answer(item.question)) {
    out.reject_reason = "unchanged";
  } else {
    out.accepted = true;
  }
  return out;
}

/// Keywords -> bridge entity (first keyword with hits) -> rewrite. Items
/// without keywords or captions come back rejected, never thrown.
inline AugmentedItem augment_item(const QAItem& item, ModelClient* keyword_client, SnippetSource& source,
                                  ModelClient& rewrite_client, std::size_t max_captions = kDefaultMaxCaptions,
                                  const GenerationOptions& opts = {}) {
  auto keywords = extract_retrieval_keywords(item, keyword_client, opts);
  AugmentedItem out;
  out.original = item;
  if (keywords.empty()) {
    out.reject_reason = "unaugmentable: no keywords";
    return out;
  }
  for (const auto& k : keywords) {
    auto caps = retrieve_captions(k, source, max_captions);
    if (!caps.empty()) return augment_question(item, caps, k, rewrite_client, opts);
  }
  out.reject_reason = "unaugmentable: no captions";
  return out;
}

/// {item_id, bridge_entity, captions_used, complex_question, short_answer,
/// accepted, reject_reason}.
inline json augmented_to_json(const AugmentedItem& a) {
  json j;
  j["item_id"] = a.original.id;
  j["bridge_entity"] = a.bridge_entity;
  j["captions_used"] = a.captions_used;
  j["complex_question"] = a.complex_question;
  j["short_answer"] = a.short_answer;
  j["accepted"] = a.accepted;
  j["reject_reason"] = a.reject_reason ? json(*a.reject_reason) : json(nullptr);
  return j;
}

struct HopPair {
  HopCount original;
  HopCount augmented;
};

struct HopIncreaseRow {
  HopBucket bucket = HopBucket::H0;
  std::size_t count = 0;
  std::optional<double> increased;  // fraction with augmented > original
};

struct HopIncreaseTable {
  std::vector<HopIncreaseRow> rows;
  std::size_t total = 0;
  std::optional<double> overall;
};

inline HopIncreaseTable hop_increase_report(const std::vector<HopPair>& pairs) {
  HopIncreaseTable t;
  std::map<HopBucket, std::size_t> count, up;
  std::size_t all_up = 0;
  for (const auto& p : pairs) {
    bool inc = p.augmented.value > p.original.value;
    ++count[p.original.bucket];
    up[p.original.bucket] += inc;
    all_up += inc;
  }
  t.total = pairs.size();
  for (auto b : kAllBuckets) {
    HopIncreaseRow row{b, count[b], std::nullopt};
    if (row.count) row.increased = static_cast<double>(up[b]) / static_cast<double>(row.count);
    t.rows.push_back(row);
  }
  if (t.total) t.overall = static_cast<double>(all_up) / static_cast<double>(t.total);
  return t;
}

inline std::string render_markdown(const HopIncreaseTable& t, const std::string& dataset) {
  std::string out = "## Hop increase percentage\n\n";
  std::vector<std::string> head{"Dataset"}, row{dataset};
  for (const auto& r : t.rows) {
    head.push_back(to_string(r.bucket));
    row.push_back(format_percent(r.increased));
  }
  head.push_back("All");
  row.push_back(format_percent(t.overall));
  return out + detail::md_row(head) + detail::md_rule(head.size()) + detail::md_row(row);
}

inline std::string render_csv(const HopIncreaseTable& t, const std::string& dataset) {
  std::string out = "dataset,bucket,count,increased\n";
  auto num = [](std::optional<double> f) {
    if (!f) return std::string{};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *f * 100.0);
    return std::string(buf);
  };
  for (const auto& r : t.rows)
    out += dataset + "," + to_string(r.bucket) + "," + std::to_string(r.count) + "," + num(r.increased) + "\n";
  out += dataset + ",all," + std::to_string(t.total) + "," + num(t.overall) + "\n";
  return out;
}

inline json hop_increase_to_json(const HopIncreaseTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"bucket", to_string(r.bucket)},
                    {"count", r.count},
                    {"increased", r.increased ? json(*r.increased) : json(nullptr)}});
  return {{"rows", rows}, {"total", t.total}, {"overall", t.overall ? json(*t.overall) : json(nullptr)}};
}

}  // namespace iimmr
