#pragma once

// Answer scoring, path grading, hop-prediction scoring and the bucketed
// report tables.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "iimmr/analyzer.hpp"
#include "iimmr/datasets.hpp"
#include "iimmr/error.hpp"

namespace iimmr {

/// Lowercase, drop apostrophes, other punctuation to spaces (except '.' and
/// ',' between digits), drop the articles a/an/the, collapse whitespace.
inline std::string normalize_answer(std::string_view input) {
  std::string s = text::lower(input);
  std::string cleaned;
  cleaned.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '\'') continue;
    if ((c == '.' || c == ',') && i > 0 && i + 1 < s.size() && text::is_digit(s[i - 1]) &&
        text::is_digit(s[i + 1])) {
      cleaned += c;
    } else if (text::is_punct(c)) {
      cleaned += ' ';
    } else {
      cleaned += c;
    }
  }
  std::vector<std::string> kept;
  for (auto& w : text::split_ws(cleaned)) {
    if (w == "a" || w == "an" || w == "the") continue;
    kept.push_back(std::move(w));
  }
  return text::join(kept, " ");
}

/// 1 iff the normalized strings are equal.
inline int gqa_accuracy(std::string_view pred, std::string_view gold) {
  return normalize_answer(pred) == normalize_answer(gold) ? 1 : 0;
}

/// Direct-answer soft accuracy over the ten leave-one-out 9-answer subsets,
/// each scored min(occurrences / 3, 1). With k total occurrences the mean is
/// [k * min(k-1, 3) + (10-k) * min(k, 3)] / 30, computed from an integer
/// numerator so equal inputs always give bit-identical results.
inline double aokvqa_accuracy(std::string_view pred, const std::vector<std::string>& gold_answers,
                              bool normalize = true) {
  if (gold_answers.size() != 10)
    throw PreconditionError("aokvqa_accuracy needs exactly 10 gold answers, got " +
                            std::to_string(gold_answers.size()));
  auto key = [&](std::string_view s) { return normalize ? normalize_answer(s) : std::string(s); };
  const auto p = key(pred);
  int k = 0;
  for (const auto& g : gold_answers) k += key(g) == p ? 1 : 0;
  int numerator = k * std::min(k - 1, 3) + (10 - k) * std::min(k, 3);
  return numerator / 30.0;
}

enum class MatchMode { Strict, Partial };

inline std::string to_string(MatchMode m) { return m == MatchMode::Strict ? "strict" : "partial"; }

/// Positional component agreement: Strict needs 3 of 3, Partial 2 of 3.
inline bool triplet_match(const KnowledgeTriplet& a, const KnowledgeTriplet& b, MatchMode mode) {
  int agree = (a.subject == b.subject) + (a.relation == b.relation) + (a.object == b.object);
  return agree >= (mode == MatchMode::Strict ? 3 : 2);
}

inline constexpr std::size_t kMaxMatchPathLength = 6;

/// True iff both paths have the same length and some bijection pairs every
/// predicted triplet with a distinct gold triplet that matches under mode.
inline bool path_match(const ReasoningPath& pred, const ReasoningPath& gold, MatchMode mode) {
  for (const auto* p : {&pred, &gold}) {
    for (const auto& s : p->steps) {
      if (!std::holds_alternative<TripletStep>(s))
        throw PreconditionError("path_match: path " + p->item_id + " has non-triplet steps");
    }
    if (p->steps.size() > kMaxMatchPathLength)
      throw PreconditionError("path_match: path " + p->item_id + " longer than " +
                              std::to_string(kMaxMatchPathLength) + " steps");
  }
  if (pred.steps.size() != gold.steps.size()) return false;
  auto a = pred.triplets();
  auto b = gold.triplets();
  std::vector<std::size_t> perm(b.size());
  std::iota(perm.begin(), perm.end(), 0);
  do {
    bool ok = true;
    for (std::size_t i = 0; ok && i < a.size(); ++i) ok = triplet_match(a[i], b[perm[i]], mode);
    if (ok) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

enum class PredMethod { Direct, BaselineCoT, ApCoT, KtPrompt };

inline std::string to_string(PredMethod m) {
  switch (m) {
    case PredMethod::Direct: return "direct";
    case PredMethod::BaselineCoT: return "cot";
    case PredMethod::ApCoT: return "apcot";
    case PredMethod::KtPrompt: return "ktprompt";
  }
  return "?";
}

inline PredMethod parse_method(std::string_view s) {
  auto l = text::lower(s);
  if (l == "direct") return PredMethod::Direct;
  if (l == "cot" || l == "baseline_cot") return PredMethod::BaselineCoT;
  if (l == "apcot") return PredMethod::ApCoT;
  if (l == "ktprompt") return PredMethod::KtPrompt;
  throw PreconditionError("unknown method: " + std::string(s));
}

/// A final answer as the model produced it; normalization happens at scoring.
struct Prediction {
  std::string item_id;
  std::string answer;
  PredMethod method = PredMethod::Direct;
  std::optional<std::string> path_ref;
};

/// Dataset-appropriate score of one prediction.
inline double score_prediction(const Prediction& p, const QAItem& item, bool normalize = true) {
  if (item.dataset == Dataset::GQA) {
    return normalize ? gqa_accuracy(p.answer, item.gold_answers.front())
                     : (p.answer == item.gold_answers.front() ? 1.0 : 0.0);
  }
  return aokvqa_accuracy(p.answer, item.gold_answers, normalize);
}

struct BucketRow {
  HopBucket bucket = HopBucket::H0;
  std::size_t count = 0;
  std::optional<double> accuracy;  // fraction in [0,1]; empty bucket => none
  double share = 0.0;              // count / total
};

struct TypeRow {
  HopBucket bucket = HopBucket::H0;
  std::size_t typed = 0;
  std::optional<double> visual;  // fractions of typed
  std::optional<double> beyond_visual;
};

struct PathMatchSummary {
  std::size_t pairs = 0;
  double strict = 0.0;
  double partial = 0.0;
};

struct HopPredictionTable {
  std::vector<BucketRow> rows;  // accuracy = exact hop agreement within gold bucket
  std::size_t total = 0;
  double overall = 0.0;
};

struct EvalReport {
  Dataset dataset = Dataset::GQA;
  std::string method;
  std::vector<BucketRow> rows;
  std::size_t total = 0;
  double overall = 0.0;
  std::vector<TypeRow> types;  // empty when no type labels were given
  std::optional<PathMatchSummary> path_match;
  std::optional<HopPredictionTable> hop_prediction;
};

struct EvalOptions {
  bool normalize_answers = true;
};

/// Per-bucket and overall accuracy of a prediction set, with the hop
/// distribution and (when type labels are given) the type distribution.
inline EvalReport evaluate_run(const std::vector<Prediction>& predictions,
                               const std::vector<QAItem>& items,
                               const std::map<std::string, HopCount>& hop_labels,
                               const std::map<std::string, ReasoningType>* type_labels = nullptr,
                               const EvalOptions& opts = {}) {
  if (predictions.empty()) throw PreconditionError("evaluate_run: empty prediction set");
  std::map<std::string, const QAItem*> by_id;
  for (const auto& it : items) by_id[it.id] = &it;

  EvalReport rep;
  rep.method = to_string(predictions.front().method);
  std::map<HopBucket, double> sum;
  std::map<HopBucket, std::size_t> count;
  std::map<HopBucket, std::pair<std::size_t, std::size_t>> typed;  // visual, beyond
  double total_sum = 0.0;
  std::set<std::string> seen;
  for (const auto& p : predictions) {
    auto it = by_id.find(p.item_id);
    if (it == by_id.end()) throw PreconditionError("prediction references unknown item " + p.item_id);
    if (!seen.insert(p.item_id).second)
      throw PreconditionError("duplicate prediction for item " + p.item_id);
    auto hop = hop_labels.find(p.item_id);
    if (hop == hop_labels.end()) throw PreconditionError("item " + p.item_id + " has no hop label");
    rep.dataset = it->second->dataset;
    double s = score_prediction(p, *it->second, opts.normalize_answers);
    auto b = hop->second.bucket;
    sum[b] += s;
    ++count[b];
    total_sum += s;
    if (type_labels) {
      auto t = type_labels->find(p.item_id);
      if (t != type_labels->end()) {
        if (t->second == ReasoningType::Visual) ++typed[b].first;
        else ++typed[b].second;
      }
    }
  }
  rep.total = predictions.size();
  rep.overall = total_sum / static_cast<double>(rep.total);
  for (auto b : kAllBuckets) {
    BucketRow row;
    row.bucket = b;
    row.count = count[b];
    row.share = static_cast<double>(row.count) / static_cast<double>(rep.total);
    if (row.count > 0) row.accuracy = sum[b] / static_cast<double>(row.count);
    rep.rows.push_back(row);
  }
  if (type_labels) {
    for (auto b : kAllBuckets) {
      TypeRow row;
      row.bucket = b;
      auto [v, bv] = typed[b];
      row.typed = v + bv;
      if (row.typed > 0) {
        row.visual = static_cast<double>(v) / static_cast<double>(row.typed);
        row.beyond_visual = static_cast<double>(bv) / static_cast<double>(row.typed);
      }
      rep.types.push_back(row);
    }
  }
  return rep;
}

/// Exact-match hop accuracy grouped by the gold bucket.
inline HopPredictionTable hop_prediction_report(const std::map<std::string, HopCount>& predicted,
                                                const std::map<std::string, HopCount>& gold) {
  if (predicted.size() != gold.size() ||
      !std::equal(predicted.begin(), predicted.end(), gold.begin(),
                  [](const auto& a, const auto& b) { return a.first == b.first; }))
    throw PreconditionError("hop_prediction_report: predicted and gold key sets differ");
  HopPredictionTable table;
  std::map<HopBucket, std::size_t> hits, count;
  std::size_t all_hits = 0;
  for (const auto& [id, g] : gold) {
    bool hit = predicted.at(id).value == g.value;
    ++count[g.bucket];
    hits[g.bucket] += hit;
    all_hits += hit;
  }
  table.total = gold.size();
  table.overall = table.total ? static_cast<double>(all_hits) / static_cast<double>(table.total) : 0.0;
  for (auto b : kAllBuckets) {
    BucketRow row;
    row.bucket = b;
    row.count = count[b];
    row.share = table.total ? static_cast<double>(row.count) / static_cast<double>(table.total) : 0.0;
    if (row.count) row.accuracy = static_cast<double>(hits[b]) / static_cast<double>(row.count);
    table.rows.push_back(row);
  }
  return table;
}

/// Corpus path agreement over every gold path; a missing prediction counts
/// as a miss under both modes.
inline PathMatchSummary path_match_report(const std::map<std::string, ReasoningPath>& predicted,
                                          const std::map<std::string, ReasoningPath>& gold) {
  PathMatchSummary s;
  std::size_t strict = 0, partial = 0;
  for (const auto& [id, g] : gold) {
    ++s.pairs;
    auto it = predicted.find(id);
    if (it == predicted.end() || it->second.steps.size() != g.steps.size()) continue;
    strict += path_match(it->second, g, MatchMode::Strict);
    partial += path_match(it->second, g, MatchMode::Partial);
  }
  if (s.pairs) {
    s.strict = static_cast<double>(strict) / static_cast<double>(s.pairs);
    s.partial = static_cast<double>(partial) / static_cast<double>(s.pairs);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Rendering

inline std::string format_percent(std::optional<double> fraction) {
  if (!fraction) return "—";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *fraction * 100.0);
  return buf;
}

namespace detail {

inline std::vector<HopBucket> report_columns(const EvalReport& r) {
  std::vector<HopBucket> cols;
  for (const auto& row : r.rows) {
    // A-OKVQA reports start at 1-hop unless 0-step paths occurred.
    if (r.dataset == Dataset::AOKVQA && row.bucket == HopBucket::H0 && row.count == 0) continue;
    cols.push_back(row.bucket);
  }
  return cols;
}

inline const BucketRow& row_for(const std::vector<BucketRow>& rows, HopBucket b) {
  return *std::find_if(rows.begin(), rows.end(), [&](const BucketRow& r) { return r.bucket == b; });
}

inline std::string md_row(const std::vector<std::string>& cells) {
  return "| " + text::join(cells, " | ") + " |\n";
}

inline std::string md_rule(std::size_t n) {
  std::vector<std::string> cells(n, "---");
  return md_row(cells);
}

}  // namespace detail

/// Markdown tables: hop distribution + accuracy, then (when present) the
/// reasoning-type distribution, hop prediction and path matching.
inline std::string render_markdown(const EvalReport& r) {
  auto cols = detail::report_columns(r);
  std::string out = "## Hop distribution and accuracy (" + to_string(r.dataset) + ", " + r.method + ")\n\n";
  std::vector<std::string> head{"Metric"};
  for (auto b : cols) head.push_back(to_string(b));
  head.push_back("All");
  out += detail::md_row(head) + detail::md_rule(head.size());
  std::vector<std::string> dist{"Hop Distribution"}, acc{r.method + " Accuracy"}, cnt{"Count"};
  for (auto b : cols) {
    const auto& row = detail::row_for(r.rows, b);
    dist.push_back(format_percent(row.share));
    acc.push_back(format_percent(row.accuracy));
    cnt.push_back(std::to_string(row.count));
  }
  dist.push_back("100.00");
  acc.push_back(format_percent(r.overall));
  cnt.push_back(std::to_string(r.total));
  out += detail::md_row(dist) + detail::md_row(acc) + detail::md_row(cnt);

  if (!r.types.empty()) {
    out += "\n## Reasoning type distribution\n\n";
    std::vector<std::string> th{"Reasoning Type"};
    std::vector<std::string> vis{"Visual"}, bey{"Beyond-visual"};
    for (auto b : cols) {
      th.push_back(to_string(b));
      const auto& t = *std::find_if(r.types.begin(), r.types.end(),
                                    [&](const TypeRow& x) { return x.bucket == b; });
      vis.push_back(format_percent(t.visual));
      bey.push_back(format_percent(t.beyond_visual));
    }
    out += detail::md_row(th) + detail::md_rule(th.size()) + detail::md_row(vis) + detail::md_row(bey);
  }
  if (r.hop_prediction) {
    out += "\n## Hop prediction\n\n";
    std::vector<std::string> h{"Model", "0-hop", "1-hop", ">=2-hop", "All"};
    std::vector<std::string> v{r.method};
    for (auto b : kAllBuckets) v.push_back(format_percent(detail::row_for(r.hop_prediction->rows, b).accuracy));
    v.push_back(format_percent(r.hop_prediction->overall));
    out += detail::md_row(h) + detail::md_rule(h.size()) + detail::md_row(v);
  }
  if (r.path_match) {
    out += "\n## Reasoning path accuracy\n\n";
    std::vector<std::string> h{"Model", "Strict Matching", "Partial Matching"};
    out += detail::md_row(h) + detail::md_rule(h.size()) +
           detail::md_row({r.method, format_percent(r.path_match->strict),
                           format_percent(r.path_match->partial)});
  }
  return out;
}

/// Machine-readable rows: table,row,bucket,count,value (value in percent,
/// empty when undefined).
inline std::string render_csv(const EvalReport& r) {
  std::string out = "table,row,bucket,count,value\n";
  auto num = [](std::optional<double> f) {
    if (!f) return std::string{};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *f * 100.0);
    return std::string(buf);
  };
  auto line = [&](const std::string& table, const std::string& row, const std::string& bucket,
                  std::size_t count, std::optional<double> v) {
    out += table + "," + row + "," + bucket + "," + std::to_string(count) + "," + num(v) + "\n";
  };
  for (const auto& row : r.rows) {
    line("hops", "distribution", to_string(row.bucket), row.count, row.share);
    line("hops", "accuracy", to_string(row.bucket), row.count, row.accuracy);
  }
  line("hops", "accuracy", "all", r.total, r.overall);
  for (const auto& t : r.types) {
    line("types", "visual", to_string(t.bucket), t.typed, t.visual);
    line("types", "beyond-visual", to_string(t.bucket), t.typed, t.beyond_visual);
  }
  if (r.hop_prediction) {
    for (const auto& row : r.hop_prediction->rows) line("hop_prediction", "accuracy", to_string(row.bucket), row.count, row.accuracy);
    line("hop_prediction", "accuracy", "all", r.hop_prediction->total, r.hop_prediction->overall);
  }
  if (r.path_match) {
    line("path_match", "strict", "all", r.path_match->pairs, r.path_match->strict);
    line("path_match", "partial", "all", r.path_match->pairs, r.path_match->partial);
  }
  return out;
}

inline json bucket_rows_json(const std::vector<BucketRow>& rows) {
  json out = json::array();
  for (const auto& row : rows) {
    out.push_back({{"bucket", to_string(row.bucket)},
                   {"count", row.count},
                   {"share", row.share},
                   {"accuracy", row.accuracy ? json(*row.accuracy) : json(nullptr)}});
  }
  return out;
}

inline json report_to_json(const EvalReport& r) {
  json j;
  j["dataset"] = to_string(r.dataset);
  j["method"] = r.method;
  j["rows"] = bucket_rows_json(r.rows);
  j["total"] = r.total;
  j["overall"] = r.overall;
  if (!r.types.empty()) {
    json t = json::array();
    for (const auto& row : r.types) {
      t.push_back({{"bucket", to_string(row.bucket)},
                   {"typed", row.typed},
                   {"visual", row.visual ? json(*row.visual) : json(nullptr)},
                   {"beyond_visual", row.beyond_visual ? json(*row.beyond_visual) : json(nullptr)}});
    }
    j["types"] = t;
  }
  if (r.hop_prediction) {
    j["hop_prediction"] = {{"rows", bucket_rows_json(r.hop_prediction->rows)},
                           {"total", r.hop_prediction->total},
                           {"overall", r.hop_prediction->overall}};
  }
  if (r.path_match) {
    j["path_match"] = {{"pairs", r.path_match->pairs},
                       {"strict", r.path_match->strict},
                       {"partial", r.path_match->partial}};
  }
  return j;
}

namespace detail {

inline HopBucket parse_bucket(const std::string& s) {
  for (auto b : kAllBuckets) {
    if (to_string(b) == s) return b;
  }
  throw ParseError("unknown hop bucket: " + s);
}

inline std::optional<double> opt_number(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

inline std::vector<BucketRow> bucket_rows_from_json(const json& arr) {
  std::vector<BucketRow> rows;
  for (const auto& x : arr) {
    rows.push_back({parse_bucket(x.at("bucket").get<std::string>()), x.at("count").get<std::size_t>(),
                    opt_number(x, "accuracy"), x.value("share", 0.0)});
  }
  return rows;
}

}  // namespace detail

inline EvalReport report_from_json(const json& j) {
  EvalReport r;
  try {
    r.dataset = parse_dataset(j.at("dataset").get<std::string>());
    r.method = j.at("method").get<std::string>();
    r.rows = detail::bucket_rows_from_json(j.at("rows"));
    r.total = j.at("total").get<std::size_t>();
    r.overall = j.at("overall").get<double>();
    if (j.contains("types")) {
      for (const auto& x : j["types"]) {
        r.types.push_back({detail::parse_bucket(x.at("bucket").get<std::string>()),
                           x.at("typed").get<std::size_t>(), detail::opt_number(x, "visual"),
                           detail::opt_number(x, "beyond_visual")});
      }
    }
    if (j.contains("hop_prediction")) {
      const auto& h = j["hop_prediction"];
      r.hop_prediction = HopPredictionTable{detail::bucket_rows_from_json(h.at("rows")),
                                            h.at("total").get<std::size_t>(), h.at("overall").get<double>()};
    }
    if (j.contains("path_match")) {
      const auto& p = j["path_match"];
      r.path_match = PathMatchSummary{p.at("pairs").get<std::size_t>(), p.at("strict").get<double>(),
                                      p.at("partial").get<double>()};
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed report: ") + e.what());
  }
  return r;
}

}  // namespace iimmr
