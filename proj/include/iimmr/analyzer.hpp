#pragma once

// Reasoning paths: generation through the two prompting strategies (and the
// baseline CoT), hop counting, visual / beyond-visual step typing, and the
// ground-truth GQA path derived from a semantic program.

#include <algorithm>
#include <optional>
#include <regex>
#include <string>
#include <variant>
#include <vector>

#include "iimmr/datasets.hpp"
#include "iimmr/error.hpp"
#include "iimmr/modelio.hpp"
#include "iimmr/prompts.hpp"
#include "iimmr/triplets.hpp"

namespace iimmr {

struct SentenceStep {
  std::string text;
  std::optional<std::vector<NormalizedTerm>> keywords;
};

struct TripletStep {
  KnowledgeTriplet value;
};

using ReasoningStep = std::variant<SentenceStep, TripletStep>;

enum class PathSource { ApCoT, ApCoT_GT, KtPrompt, GoldScenegraph, BaselineCoT };

inline std::string to_string(PathSource s) {
  switch (s) {
    case PathSource::ApCoT: return "apcot";
    case PathSource::ApCoT_GT: return "apcot_gt";
    case PathSource::KtPrompt: return "ktprompt";
    case PathSource::GoldScenegraph: return "gold_scenegraph";
    case PathSource::BaselineCoT: return "baseline_cot";
  }
  return "?";
}

inline PathSource parse_path_source(std::string_view s) {
  for (auto src : {PathSource::ApCoT, PathSource::ApCoT_GT, PathSource::KtPrompt,
                   PathSource::GoldScenegraph, PathSource::BaselineCoT}) {
    if (to_string(src) == s) return src;
  }
  throw ParseError("unknown path source: " + std::string(s));
}

inline bool is_triplet_source(PathSource s) {
  return s == PathSource::KtPrompt || s == PathSource::GoldScenegraph;
}

struct ReasoningPath {
  std::string item_id;
  PathSource source = PathSource::ApCoT;
  std::vector<ReasoningStep> steps;
  std::string raw_model_text;
  std::vector<std::string> warnings;

  // Triplet sources hold only triplet steps; sentence sources only sentences.
  void validate() const {
    for (const auto& s : steps) {
      bool triplet = std::holds_alternative<TripletStep>(s);
      if (triplet != is_triplet_source(source))
        throw PreconditionError("path " + item_id + ": " + to_string(source) +
                                " paths cannot hold " + (triplet ? "triplet" : "sentence") +
                                " steps");
      if (!triplet && text::trim(std::get<SentenceStep>(s).text).empty())
        throw PreconditionError("path " + item_id + ": empty sentence step");
    }
  }

  std::vector<KnowledgeTriplet> triplets() const {
    std::vector<KnowledgeTriplet> out;
    for (const auto& s : steps) {
      if (const auto* t = std::get_if<TripletStep>(&s)) out.push_back(t->value);
    }
    return out;
  }
};

enum class HopBucket { H0, H1, H2plus };

inline std::string to_string(HopBucket b) {
  switch (b) {
    case HopBucket::H0: return "0-hop";
    case HopBucket::H1: return "1-hop";
    case HopBucket::H2plus: return ">=2-hop";
  }
  return "?";
}

inline constexpr std::array<HopBucket, 3> kAllBuckets = {HopBucket::H0, HopBucket::H1,
                                                         HopBucket::H2plus};

struct HopCount {
  std::size_t value = 0;
  HopBucket bucket = HopBucket::H0;

  static HopCount of(std::size_t value) {
    return {value, value == 0 ? HopBucket::H0 : value == 1 ? HopBucket::H1 : HopBucket::H2plus};
  }

  friend bool operator==(const HopCount&, const HopCount&) = default;
};

/// One sentence (or one triplet) is one reasoning step.
inline HopCount count_hops(const ReasoningPath& path) { return HopCount::of(path.steps.size()); }

enum class ReasoningType { Visual, BeyondVisual };

inline std::string to_string(ReasoningType t) {
  return t == ReasoningType::Visual ? "visual" : "beyond-visual";
}

inline ReasoningType parse_reasoning_type(std::string_view s) {
  if (s == "visual") return ReasoningType::Visual;
  if (s == "beyond-visual") return ReasoningType::BeyondVisual;
  throw ParseError("unknown reasoning type: " + std::string(s));
}

struct StepAnalysis {
  std::size_t step_index = 0;
  std::vector<NormalizedTerm> keywords;
  std::vector<bool> matched;
  ReasoningType reasoning_type = ReasoningType::BeyondVisual;
  bool heuristic_keywords = false;  // produced by the offline fallback
};

/// Model names and limits for every request the pipeline issues.
struct GenerationOptions {
  std::string vlm_model = "blip2-flan-t5-xxl";
  std::string llm_model = "llama-2-70b-chat";
  std::optional<fs::path> image_dir;  // image_ref = image_dir / image_id
  const TemplateSet* templates = nullptr;
  int answer_max_tokens = 32;
  int rationale_max_tokens = 256;
  int caption_max_tokens = 96;
  int triplet_max_tokens = 256;
  int keyword_max_tokens = 64;
  int augment_max_tokens = 160;

  const TemplateSet& tpl() const { return templates ? *templates : default_templates(); }

  std::string image_ref(const QAItem& item) const {
    return image_dir ? (*image_dir / item.image_id).string() : item.image_id;
  }

  ModelRequest vlm(std::string prompt, const QAItem& item, int max_tokens) const {
    ModelRequest r;
    r.model_name = vlm_model;
    r.prompt = std::move(prompt);
    r.image_ref = image_ref(item);
    r.max_tokens = max_tokens;
    return r;
  }

  ModelRequest llm(std::string prompt, int max_tokens) const {
    ModelRequest r;
    r.model_name = llm_model;
    r.prompt = std::move(prompt);
    r.max_tokens = max_tokens;
    return r;
  }
};

/// Splits a rationale on ". ", "? ", "! " and newlines; terminal punctuation
/// stays with its sentence. Fragments shorter than 3 characters are dropped.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  auto flush = [&](std::size_t begin, std::size_t end) {
    auto s = text::trim(text.substr(begin, end - begin));
    if (s.size() >= 3) out.emplace_back(s);
  };
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c == '\n') {
      flush(start, i);
      start = i + 1;
    } else if ((c == '.' || c == '?' || c == '!') && i + 1 < text.size() && text[i + 1] == ' ') {
      flush(start, i + 1);
      start = i + 1;
    }
  }
  flush(start, text.size());
  return out;
}

inline std::vector<ReasoningStep> sentence_steps(std::string_view rationale) {
  std::vector<ReasoningStep> steps;
  for (auto& s : split_sentences(rationale)) steps.emplace_back(SentenceStep{std::move(s), std::nullopt});
  return steps;
}

/// Answer-guided CoT. Stage 1 asks the VLM for a direct answer (skipped when
/// use_gold_answer, which substitutes the gold / modal gold answer); stage 2
/// asks for a rationale with that answer offered as a possible answer.
inline ReasoningPath generate_path_apcot(const QAItem& item, ModelClient& client,
                                         bool use_gold_answer, const GenerationOptions& opts = {}) {
  ReasoningPath path;
  path.item_id = item.id;
  path.source = use_gold_answer ? PathSource::ApCoT_GT : PathSource::ApCoT;

  std::string hint;
  if (use_gold_answer) {
    hint = item.primary_answer();
  } else {
    PromptContext ctx;
    ctx.question = item.question;
    auto resp = client.complete(
        opts.vlm(build_prompt(PromptKind::DirectAnswer, ctx, opts.tpl()), item, opts.answer_max_tokens));
    hint = extract_short_answer(resp.text);
    if (hint.empty()) {
      path.warnings.push_back("empty initial prediction");
      return path;
    }
  }

  PromptContext ctx;
  ctx.question = item.question;
  ctx.answer_hint = hint;
  auto resp = client.complete(
      opts.vlm(build_prompt(PromptKind::ApCoT, ctx, opts.tpl()), item, opts.rationale_max_tokens));
  path.raw_model_text = resp.text;
  path.steps = sentence_steps(resp.text);
  if (path.steps.empty()) path.warnings.push_back("empty rationale");
  return path;
}

/// Zero-shot CoT baseline: a single step-by-step prompt.
inline ReasoningPath generate_path_cot(const QAItem& item, ModelClient& client,
                                       const GenerationOptions& opts = {}) {
  ReasoningPath path;
  path.item_id = item.id;
  path.source = PathSource::BaselineCoT;
  PromptContext ctx;
  ctx.question = item.question;
  auto resp = client.complete(
      opts.vlm(build_prompt(PromptKind::BaselineCoT, ctx, opts.tpl()), item, opts.rationale_max_tokens));
  path.raw_model_text = resp.text;
  path.steps = sentence_steps(resp.text);
  if (path.steps.empty()) path.warnings.push_back("empty rationale");
  return path;
}

/// Knowledge-triplet path: QA pair -> caption -> triplets -> noise filter.
inline ReasoningPath generate_path_ktprompt(const QAItem& item, ModelClient& client,
                                            const GenerationOptions& opts = {},
                                            const StopwordSet& stopwords = default_stopwords()) {
  ReasoningPath path;
  path.item_id = item.id;
  path.source = PathSource::KtPrompt;

  PromptContext cap_ctx;
  cap_ctx.question = item.question;
  cap_ctx.gold_answer = item.primary_answer();
  auto cap = client.complete(
      opts.llm(build_prompt(PromptKind::CaptionFromQA, cap_ctx, opts.tpl()), opts.caption_max_tokens));
  auto caption = std::string(text::trim(cap.text));
  if (caption.empty()) {
    path.warnings.push_back("empty caption");
    return path;
  }

  PromptContext tri_ctx;
  tri_ctx.caption = caption;
  auto tri = client.complete(
      opts.llm(build_prompt(PromptKind::TripletExtraction, tri_ctx, opts.tpl()), opts.triplet_max_tokens));
  path.raw_model_text = tri.text;
  auto parsed = parse_triplets(tri.text);
  if (!parsed.issues.empty())
    path.warnings.push_back(std::to_string(parsed.issues.size()) + " unparseable line(s)");
  auto clean = filter_noisy(parsed.triplets, stopwords);
  if (clean.size() < parsed.triplets.size())
    path.warnings.push_back(std::to_string(parsed.triplets.size() - clean.size()) +
                            " noisy triplet(s) dropped");
  for (auto& t : clean) path.steps.emplace_back(TripletStep{std::move(t)});
  if (path.steps.empty()) path.warnings.push_back("no triplets survived filtering");
  return path;
}

// ---------------------------------------------------------------------------
// Step typing

/// K matches L when their token sequences are equal or one is a contiguous
/// subsequence of the other.
inline bool keyword_matches(const NormalizedTerm& keyword, const NormalizedTerm& label) {
  if (keyword.empty() || label.empty()) return false;
  const auto& a = keyword.tokens.size() <= label.tokens.size() ? keyword.tokens : label.tokens;
  const auto& b = keyword.tokens.size() <= label.tokens.size() ? label.tokens : keyword.tokens;
  return std::search(b.begin(), b.end(), a.begin(), a.end()) != b.end();
}

/// Parses a keyword-extraction response: comma / semicolon / newline
/// separated, list markers tolerated, stopword-only entries dropped,
/// duplicates removed keeping first occurrence.
inline std::vector<NormalizedTerm> parse_keyword_list(std::string_view response,
                                                      const StopwordSet& stopwords = default_stopwords()) {
  std::vector<NormalizedTerm> out;
  std::string buf(response);
  std::replace(buf.begin(), buf.end(), ';', ',');
  std::replace(buf.begin(), buf.end(), '\n', ',');
  for (const auto& piece : text::split(buf, ',')) {
    auto term = normalize_term(detail::strip_list_marker(piece));
    if (term.empty() || all_stopwords(term, stopwords)) continue;
    if (std::find(out.begin(), out.end(), term) == out.end()) out.push_back(std::move(term));
  }
  return out;
}

/// Offline stand-in for the LLM keyword extractor: content tokens of the
/// sentence (stopwords and interrogatives removed).
inline std::vector<NormalizedTerm> heuristic_keywords(std::string_view sentence,
                                                      const StopwordSet& stopwords = default_stopwords()) {
  std::vector<NormalizedTerm> out;
  for (const auto& tok : normalize_term(sentence).tokens) {
    if (stopwords.contains(tok) || question_function_words().contains(tok)) continue;
    NormalizedTerm t{{tok}};
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(std::move(t));
  }
  return out;
}

/// Where sentence keywords come from when a step carries none.
struct KeywordSource {
  ModelClient* client = nullptr;
  GenerationOptions options;
  bool fallback = false;  // use heuristic_keywords when no client or on model error
};

inline std::vector<NormalizedTerm> extract_keywords(std::string_view sentence, const KeywordSource& src,
                                                    bool* used_heuristic = nullptr) {
  auto heuristic = [&] {
    if (used_heuristic) *used_heuristic = true;
    return heuristic_keywords(sentence);
  };
  if (src.client == nullptr) {
    if (!src.fallback)
      throw PreconditionError("keyword extraction needs a model client or the fallback heuristic");
    return heuristic();
  }
  try {
    PromptContext ctx;
    ctx.sentence = std::string(sentence);
    auto resp = src.client->complete(src.options.llm(
        build_prompt(PromptKind::KeywordExtraction, ctx, src.options.tpl()), src.options.keyword_max_tokens));
    return parse_keyword_list(resp.text);
  } catch (const Error&) {
    if (!src.fallback) throw;
    return heuristic();
  }
}

/// Visual iff the step has keywords and every keyword matches a detected
/// object label. Triplet steps use their subject and object as keywords.
inline StepAnalysis classify_step(const ReasoningStep& step, const std::vector<Detection>& detections,
                                  const KeywordSource& source = {}, std::size_t step_index = 0) {
  StepAnalysis a;
  a.step_index = step_index;
  if (const auto* t = std::get_if<TripletStep>(&step)) {
    a.keywords = {t->value.subject, t->value.object};
  } else {
    const auto& s = std::get<SentenceStep>(step);
    if (s.keywords) {
      a.keywords = *s.keywords;
    } else {
      a.keywords = extract_keywords(s.text, source, &a.heuristic_keywords);
    }
  }
  a.keywords.erase(std::remove_if(a.keywords.begin(), a.keywords.end(),
                                  [](const NormalizedTerm& k) { return k.empty(); }),
                   a.keywords.end());
  bool all = !a.keywords.empty();
  for (const auto& k : a.keywords) {
    bool hit = std::any_of(detections.begin(), detections.end(),
                           [&](const Detection& d) { return keyword_matches(k, d.term); });
    a.matched.push_back(hit);
    all = all && hit;
  }
  a.reasoning_type = all ? ReasoningType::Visual : ReasoningType::BeyondVisual;
  return a;
}

/// Question-level type: beyond-visual if any step is.
inline ReasoningType classify_question(const std::vector<StepAnalysis>& analyses) {
  if (analyses.empty()) throw PreconditionError("classify_question: no step analyses");
  for (const auto& a : analyses) {
    if (a.reasoning_type == ReasoningType::BeyondVisual) return ReasoningType::BeyondVisual;
  }
  return ReasoningType::Visual;
}

// ---------------------------------------------------------------------------
// GQA ground-truth paths

struct GoldPath {
  ReasoningPath path;
  HopCount hops;
};

namespace detail {

inline const std::vector<std::string>& known_program_ops() {
  static const std::vector<std::string> ops = {"select", "relate", "filter", "query",
                                               "verify", "choose", "exist",  "and",
                                               "or",     "same",   "different", "common",
                                               "compare"};
  return ops;
}

struct OpName {
  std::string base;      // "verify"
  std::string category;  // "color", "rel", "" ...
};

inline OpName split_op(const std::string& operation) {
  auto words = text::split_ws(text::lower(operation));
  OpName n;
  if (words.empty()) return n;
  n.base = words[0];
  n.category = text::join(std::vector<std::string>(words.begin() + 1, words.end()), " ");
  return n;
}

// Drops GQA object-id annotations: "truck (722415)" -> "truck".
inline std::string strip_ids(std::string_view arg) {
  static const std::regex ids(R"(\s*\([^()]*\)\s*$)");
  return std::string(text::trim(std::regex_replace(std::string(arg), ids, "")));
}

struct RelationArg {
  std::string target;    // "_" when unnamed
  std::string relation;
  bool target_is_subject = false;  // GQA direction flag "s"
};

// "target,relation,s|o" or a bare relation name.
inline RelationArg parse_relation_arg(const std::string& raw) {
  auto arg = strip_ids(raw);
  auto parts = text::split(arg, ',');
  RelationArg r;
  if (parts.size() == 1) {
    r.target = "_";
    r.relation = std::string(text::trim(parts[0]));
  } else if (parts.size() == 3) {
    r.target = std::string(text::trim(parts[0]));
    r.relation = std::string(text::trim(parts[1]));
    auto dir = text::lower(text::trim(parts[2]));
    if (dir != "s" && dir != "o") throw PreconditionError("relation direction must be s or o: " + raw);
    r.target_is_subject = dir == "s";
  } else {
    throw PreconditionError("malformed relation argument: " + raw);
  }
  if (r.relation.empty()) throw PreconditionError("relation argument without a relation: " + raw);
  if (r.target.empty()) r.target = "_";
  return r;
}

inline std::string node_label(const std::string& name) { return name == "_" ? "object" : name; }

}  // namespace detail

/// Ground-truth path of a GQA item from its semantic program.
///
/// Hops = number of relate ops, plus one when the final op reads an attribute
/// or relation: any `query`, or `verify <cat>` / `choose <cat>` with a
/// category other than "name". Existence checks, name/category checks and
/// logical combinators add nothing.
///
/// Triplets: one per relate op, (subject, relation, object) with the GQA
/// direction flag honoured; then for an attribute terminal one
/// (object, category, value) where value is the gold answer for query/choose
/// and the verified value for verify. Unnamed relate targets ("_") are
/// labelled "object".
inline GoldPath gqa_gold_path(const QAItem& item) {
  if (!item.semantic_program) throw PreconditionError("item " + item.id + " has no semantic program");
  if (item.gold_answers.empty()) throw PreconditionError("item " + item.id + " has no gold answer");
  const auto& ops = item.semantic_program->ops;
  item.semantic_program->validate();

  std::vector<std::string> unknown;
  for (const auto& op : ops) {
    auto base = detail::split_op(op.operation).base;
    const auto& known = detail::known_program_ops();
    if (std::find(known.begin(), known.end(), base) == known.end() &&
        std::find(unknown.begin(), unknown.end(), op.operation) == unknown.end())
      unknown.push_back(op.operation);
  }
  if (!unknown.empty())
    throw PreconditionError("item " + item.id + ": unknown semantic operation(s): " +
                            text::join(unknown, ", "));

  GoldPath gold;
  gold.path.item_id = item.id;
  gold.path.source = PathSource::GoldScenegraph;
  const std::string answer = item.gold_answers.front();

  std::vector<std::string> node(ops.size(), "object");
  auto input_node = [&](std::size_t i) {
    return ops[i].dependencies.empty() ? std::string("object") : node[ops[i].dependencies.front()];
  };
  auto add = [&](const std::string& s, const std::string& r, const std::string& o) {
    gold.path.steps.emplace_back(
        TripletStep{KnowledgeTriplet::make(s, r, o, "(" + s + ", " + r + ", " + o + ")")});
  };

  for (std::size_t i = 0; i < ops.size(); ++i) {
    auto name = detail::split_op(ops[i].operation);
    if (name.base == "select") {
      node[i] = detail::strip_ids(ops[i].argument);
      if (node[i].empty()) node[i] = "object";
    } else if (name.base == "relate") {
      auto rel = detail::parse_relation_arg(ops[i].argument);
      auto current = input_node(i);
      auto target = detail::node_label(rel.target);
      if (rel.target_is_subject) add(target, rel.relation, current);
      else add(current, rel.relation, target);
      node[i] = target;
    } else {
      node[i] = input_node(i);
    }
  }

  const auto& last = ops.back();
  auto name = detail::split_op(last.operation);
  auto subject = input_node(ops.size() - 1);
  if (name.base == "query") {
    auto category = detail::strip_ids(last.argument);
    if (category.empty()) category = name.category.empty() ? "name" : name.category;
    add(subject, category, answer);
  } else if ((name.base == "verify" || name.base == "choose") && !name.category.empty() &&
             name.category != "name") {
    if (name.category == "rel") {
      auto rel = detail::parse_relation_arg(last.argument);
      auto target = detail::node_label(rel.target);
      auto relation = name.base == "choose" ? answer : rel.relation;
      if (rel.target_is_subject) add(target, relation, subject);
      else add(subject, relation, target);
    } else {
      auto value = name.base == "verify" ? detail::strip_ids(last.argument) : answer;
      add(subject, name.category, value);
    }
  }
  gold.hops = count_hops(gold.path);
  return gold;
}

// ---------------------------------------------------------------------------
// Path records (line-delimited)

inline json path_to_json(const ReasoningPath& p) {
  json steps = json::array();
  for (const auto& s : p.steps) {
    if (const auto* t = std::get_if<TripletStep>(&s)) {
      steps.push_back({{"kind", "triplet"},
                       {"triplet", {t->value.subject.str(), t->value.relation.str(), t->value.object.str()}},
                       {"text", t->value.raw}});
    } else {
      const auto& st = std::get<SentenceStep>(s);
      json j{{"kind", "sentence"}, {"text", st.text}};
      if (st.keywords) {
        json kws = json::array();
        for (const auto& k : *st.keywords) kws.push_back(k.str());
        j["keywords"] = kws;
      }
      steps.push_back(std::move(j));
    }
  }
  return {{"item_id", p.item_id},
          {"source", to_string(p.source)},
          {"steps", steps},
          {"raw_model_text", p.raw_model_text},
          {"warnings", p.warnings}};
}

inline ReasoningPath path_from_json(const json& j) {
  ReasoningPath p;
  try {
    p.item_id = j.at("item_id").get<std::string>();
    p.source = parse_path_source(j.at("source").get<std::string>());
    p.raw_model_text = j.value("raw_model_text", std::string{});
    p.warnings = j.value("warnings", std::vector<std::string>{});
    for (const auto& s : j.at("steps")) {
      auto kind = s.at("kind").get<std::string>();
      if (kind == "triplet") {
        auto parts = s.at("triplet").get<std::vector<std::string>>();
        if (parts.size() != 3) throw ParseError("triplet step needs 3 components");
        p.steps.emplace_back(
            TripletStep{KnowledgeTriplet::make(parts[0], parts[1], parts[2], s.value("text", std::string{}))});
      } else if (kind == "sentence") {
        SentenceStep st{s.at("text").get<std::string>(), std::nullopt};
        if (s.contains("keywords")) {
          st.keywords.emplace();
          for (const auto& k : s["keywords"]) st.keywords->push_back(normalize_term(k.get<std::string>()));
        }
        p.steps.emplace_back(std::move(st));
      } else {
        throw ParseError("unknown step kind: " + kind);
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed path record: ") + e.what());
  }
  p.validate();
  return p;
}

}  // namespace iimmr
