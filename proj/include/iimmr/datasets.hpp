#pragma once

// Ingest of GQA / A-OKVQA question files, detector output and local snippet
// stores.

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iimmr/error.hpp"
#include "iimmr/io.hpp"
#include "iimmr/triplets.hpp"

namespace iimmr {

enum class Dataset { GQA, AOKVQA };
enum class Split { Train, Val, TestDev, Test };

inline std::string to_string(Dataset d) { return d == Dataset::GQA ? "gqa" : "aokvqa"; }

inline Dataset parse_dataset(std::string_view s) {
  auto l = text::lower(s);
  if (l == "gqa") return Dataset::GQA;
  if (l == "aokvqa" || l == "a-okvqa") return Dataset::AOKVQA;
  throw PreconditionError("unknown dataset: " + std::string(s));
}

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::TestDev: return "testdev";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  auto l = text::lower(s);
  if (l == "train") return Split::Train;
  if (l == "val" || l == "validation") return Split::Val;
  if (l == "testdev" || l == "test-dev" || l == "test_dev") return Split::TestDev;
  if (l == "test") return Split::Test;
  throw PreconditionError("unknown split: " + std::string(s));
}

struct ProgramOp {
  std::string operation;  // "select", "relate", "query", "verify color", ...
  std::string argument;
  std::vector<std::size_t> dependencies;
};

struct SemanticProgram {
  std::vector<ProgramOp> ops;

  // Throws PreconditionError unless non-empty and every dependency points
  // at an earlier op.
  void validate() const {
    if (ops.empty()) throw PreconditionError("semantic program has no ops");
    for (std::size_t i = 0; i < ops.size(); ++i) {
      for (auto d : ops[i].dependencies) {
        if (d >= i) {
          throw PreconditionError("semantic program op " + std::to_string(i) +
                                  " depends on non-earlier op " + std::to_string(d));
        }
      }
    }
  }
};

/// One VQA question. GQA items carry one gold answer, A-OKVQA items ten.
struct QAItem {
  std::string id;
  std::string question;
  std::string image_id;
  std::vector<std::string> gold_answers;
  Dataset dataset = Dataset::GQA;
  std::optional<SemanticProgram> semantic_program;

  void validate() const {
    if (text::trim(question).empty()) throw PreconditionError("item " + id + ": empty question");
    if (dataset == Dataset::GQA) {
      if (gold_answers.size() != 1)
        throw PreconditionError("item " + id + ": GQA items need exactly one gold answer");
    } else {
      if (gold_answers.size() != 10)
        throw PreconditionError("item " + id + ": A-OKVQA items need exactly 10 gold answers");
      if (semantic_program)
        throw PreconditionError("item " + id + ": semantic programs are GQA-only");
    }
    if (semantic_program) semantic_program->validate();
  }

  /// The single answer that stands for the item in prompts: the GQA answer,
  /// or the most frequent A-OKVQA direct answer (ties: first seen).
  std::string primary_answer() const {
    if (gold_answers.empty()) throw PreconditionError("item " + id + " has no gold answer");
    std::map<std::string, int> counts;
    for (const auto& a : gold_answers) ++counts[a];
    const std::string* best = &gold_answers.front();
    for (const auto& a : gold_answers) {
      if (counts[a] > counts[*best]) best = &a;
    }
    return *best;
  }
};

struct LoadIssue {
  std::string record_id;
  std::string message;
};

struct LoadReport {
  Split split = Split::Val;
  std::vector<LoadIssue> errors;   // records skipped
  std::vector<LoadIssue> flagged;  // records kept after repair
};

struct LoadResult {
  std::vector<QAItem> items;
  LoadReport report;
};

namespace detail {

inline std::optional<std::string> string_field(const json& rec, const char* key) {
  auto it = rec.find(key);
  if (it == rec.end()) return std::nullopt;
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  return std::nullopt;
}

inline SemanticProgram parse_program(const json& sem) {
  if (!sem.is_array()) throw ParseError("\"semantic\" is not a list");
  SemanticProgram prog;
  for (const auto& op : sem) {
    if (!op.is_object() || !op.contains("operation") || !op["operation"].is_string())
      throw ParseError("semantic op without an \"operation\" string");
    ProgramOp p;
    p.operation = op["operation"].get<std::string>();
    if (op.contains("argument") && op["argument"].is_string())
      p.argument = op["argument"].get<std::string>();
    if (op.contains("dependencies")) {
      if (!op["dependencies"].is_array()) throw ParseError("\"dependencies\" is not a list");
      for (const auto& d : op["dependencies"]) {
        if (!d.is_number_integer() || d.get<long long>() < 0)
          throw ParseError("dependency is not a non-negative integer");
        p.dependencies.push_back(d.get<std::size_t>());
      }
    }
    prog.ops.push_back(std::move(p));
  }
  return prog;
}

inline void sort_by_id(std::vector<QAItem>& items) {
  std::stable_sort(items.begin(), items.end(),
                   [](const QAItem& a, const QAItem& b) { return a.id < b.id; });
}

}  // namespace detail

/// GQA question file: map of question id to {question, answer, imageId, semantic?}.
inline LoadResult load_gqa_json(const json& doc, Split split) {
  if (!doc.is_object()) throw ParseError("GQA file: top level must be a map of question ids");
  LoadResult res;
  res.report.split = split;
  for (const auto& [id, rec] : doc.items()) {
    if (!rec.is_object()) throw ParseError("GQA file: record " + id + " is not an object");
    QAItem item;
    item.id = id;
    item.dataset = Dataset::GQA;
    auto question = detail::string_field(rec, "question");
    auto answer = detail::string_field(rec, "answer");
    auto image = detail::string_field(rec, "imageId");
    std::string missing = !question ? "question" : !answer ? "answer" : !image ? "imageId" : "";
    if (!missing.empty()) {
      res.report.errors.push_back({id, "missing required field \"" + missing + "\""});
      continue;
    }
    item.question = *question;
    item.gold_answers = {*answer};
    item.image_id = *image;
    try {
      if (rec.contains("semantic") && !rec["semantic"].is_null())
        item.semantic_program = detail::parse_program(rec["semantic"]);
      item.validate();
    } catch (const Error& e) {
      res.report.errors.push_back({id, e.what()});
      continue;
    }
    res.items.push_back(std::move(item));
  }
  detail::sort_by_id(res.items);
  return res;
}

inline LoadResult load_gqa(const fs::path& path, Split split) {
  return load_gqa_json(read_json_file(path), split);
}

namespace detail {

// Answers ordered by descending frequency, ties by first occurrence.
inline std::vector<std::string> by_frequency(const std::vector<std::string>& answers) {
  std::vector<std::pair<std::string, int>> counts;
  for (const auto& a : answers) {
    auto it = std::find_if(counts.begin(), counts.end(), [&](auto& c) { return c.first == a; });
    if (it == counts.end()) counts.emplace_back(a, 1);
    else ++it->second;
  }
  std::stable_sort(counts.begin(), counts.end(),
                   [](auto& x, auto& y) { return x.second > y.second; });
  std::vector<std::string> out;
  for (auto& [a, c] : counts) out.insert(out.end(), static_cast<std::size_t>(c), a);
  return out;
}

}  // namespace detail

/// A-OKVQA file: list of {question_id, image_id, question, direct_answers}.
/// Records with a direct-answer count other than 10 are repaired (padded
/// with the modal answer, or truncated by frequency) and flagged.
inline LoadResult load_aokvqa_json(const json& doc, Split split) {
  if (!doc.is_array()) throw ParseError("A-OKVQA file: top level must be a list");
  LoadResult res;
  res.report.split = split;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& rec = doc[i];
    auto id = rec.is_object() ? detail::string_field(rec, "question_id") : std::nullopt;
    std::string rid = id ? *id : "#" + std::to_string(i);
    if (!rec.is_object()) throw ParseError("A-OKVQA file: record " + rid + " is not an object");
    auto question = detail::string_field(rec, "question");
    auto image = detail::string_field(rec, "image_id");
    std::string missing = !id ? "question_id" : !question ? "question" : !image ? "image_id" : "";
    if (missing.empty() && (!rec.contains("direct_answers") || !rec["direct_answers"].is_array()))
      missing = "direct_answers";
    if (!missing.empty()) {
      res.report.errors.push_back({rid, "missing required field \"" + missing + "\""});
      continue;
    }
    std::vector<std::string> answers;
    bool bad = false;
    for (const auto& a : rec["direct_answers"]) {
      if (!a.is_string()) bad = true;
      else answers.push_back(a.get<std::string>());
    }
    if (bad || answers.empty()) {
      res.report.errors.push_back({rid, "direct_answers must be a non-empty list of strings"});
      continue;
    }
    if (answers.size() != 10) {
      std::string note = "had " + std::to_string(answers.size()) + " direct answers; ";
      if (answers.size() > 10) {
        answers = detail::by_frequency(answers);
        answers.resize(10);
        note += "truncated by frequency";
      } else {
        std::string modal = detail::by_frequency(answers).front();
        answers.resize(10, modal);
        note += "padded with modal answer \"" + modal + "\"";
      }
      res.report.flagged.push_back({rid, note});
    }
    QAItem item;
    item.id = rid;
    item.question = *question;
    item.image_id = *image;
    item.gold_answers = std::move(answers);
    item.dataset = Dataset::AOKVQA;
    try {
      item.validate();
    } catch (const Error& e) {
      res.report.errors.push_back({rid, e.what()});
      continue;
    }
    res.items.push_back(std::move(item));
  }
  detail::sort_by_id(res.items);
  return res;
}

inline LoadResult load_aokvqa(const fs::path& path, Split split) {
  return load_aokvqa_json(read_json_file(path), split);
}

inline LoadResult load_dataset(Dataset d, const fs::path& path, Split split) {
  return d == Dataset::GQA ? load_gqa(path, split) : load_aokvqa(path, split);
}

struct Detection {
  std::string label;
  NormalizedTerm term;
  double score = 0.0;
  std::optional<std::array<double, 4>> bbox;
};

/// image_id -> detections that passed the score threshold.
class DetectionIndex {
 public:
  void add(const std::string& image_id, Detection d) { by_image_[image_id].push_back(std::move(d)); }
  void touch(const std::string& image_id) { by_image_[image_id]; }

  // Empty list for unknown images.
  const std::vector<Detection>& for_image(const std::string& image_id) const {
    static const std::vector<Detection> kNone;
    auto it = by_image_.find(image_id);
    return it == by_image_.end() ? kNone : it->second;
  }

  bool contains(const std::string& image_id) const { return by_image_.contains(image_id); }
  std::size_t image_count() const { return by_image_.size(); }

 private:
  std::map<std::string, std::vector<Detection>> by_image_;
};

inline DetectionIndex load_detections_json(const json& doc, double score_threshold) {
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
    throw PreconditionError("detection score threshold must lie in [0,1]");
  if (!doc.is_array()) throw ParseError("detection file: top level must be a list");
  DetectionIndex index;
  for (const auto& rec : doc) {
    auto image = rec.is_object() ? detail::string_field(rec, "image_id") : std::nullopt;
    if (!image) throw ParseError("detection file: record without image_id");
    if (!rec.contains("objects") || !rec["objects"].is_array())
      throw ParseError("detection file: image " + *image + " has no \"objects\" list");
    // Images with everything filtered out still get an (empty) entry.
    index.touch(*image);
    for (const auto& obj : rec["objects"]) {
      if (!obj.is_object() || !obj.contains("label") || !obj["label"].is_string() ||
          !obj.contains("score") || !obj["score"].is_number())
        throw ParseError("detection file: image " + *image + ": object needs label and score");
      Detection d;
      d.label = obj["label"].get<std::string>();
      d.score = obj["score"].get<double>();
      if (!(d.score >= 0.0 && d.score <= 1.0))
        throw ParseError("detection file: image " + *image + ": score " +
                         std::to_string(d.score) + " outside [0,1] for label \"" + d.label + "\"");
      d.term = normalize_term(d.label);
      if (d.term.empty())
        throw ParseError("detection file: image " + *image + ": label normalizes to nothing");
      if (obj.contains("bbox") && !obj["bbox"].is_null()) {
        const auto& b = obj["bbox"];
        if (!b.is_array() || b.size() != 4)
          throw ParseError("detection file: image " + *image + ": bbox must have 4 numbers");
        std::array<double, 4> box{};
        for (std::size_t k = 0; k < 4; ++k) {
          if (!b[k].is_number()) throw ParseError("detection file: non-numeric bbox");
          box[k] = b[k].get<double>();
        }
        d.bbox = box;
      }
      if (d.score < score_threshold) continue;
      index.add(*image, std::move(d));
    }
  }
  return index;
}

inline DetectionIndex load_detections(const fs::path& path, double score_threshold) {
  return load_detections_json(read_json_file(path), score_threshold);
}

struct Caption {
  std::string text;
  std::string source_id;

  friend bool operator==(const Caption&, const Caption&) = default;
};

/// Normalized keyword -> captions, in file order.
class SnippetStore {
 public:
  void add(std::string_view keyword, Caption c) {
    if (text::trim(c.text).empty()) throw ParseError("snippet store: empty caption text");
    by_keyword_[normalize_term(keyword).str()].push_back(std::move(c));
  }

  const std::vector<Caption>& lookup(std::string_view keyword) const {
    static const std::vector<Caption> kNone;
    auto it = by_keyword_.find(normalize_term(keyword).str());
    return it == by_keyword_.end() ? kNone : it->second;
  }

  std::size_t size() const { return by_keyword_.size(); }

 private:
  std::map<std::string, std::vector<Caption>> by_keyword_;
};

/// Line-delimited {keyword, captions: [{text, source_id}]}.
inline SnippetStore load_snippet_store(const fs::path& path) {
  SnippetStore store;
  for (const auto& rec : read_jsonl(path)) {
    if (!rec.is_object() || !rec.contains("keyword") || !rec["keyword"].is_string() ||
        !rec.contains("captions") || !rec["captions"].is_array())
      throw ParseError("snippet store " + path.string() + ": record needs keyword and captions");
    auto kw = rec["keyword"].get<std::string>();
    for (const auto& c : rec["captions"]) {
      if (!c.is_object() || !c.contains("text") || !c["text"].is_string())
        throw ParseError("snippet store: caption for \"" + kw + "\" has no text");
      store.add(kw, {c["text"].get<std::string>(), c.value("source_id", std::string{})});
    }
  }
  return store;
}

}  // namespace iimmr
