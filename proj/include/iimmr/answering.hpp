#pragma once

// Final answers: direct prompting and path-conditioned prompting with the
// answer trigger.

#include <optional>
#include <string>
#include <vector>

#include "iimmr/analyzer.hpp"
#include "iimmr/metrics.hpp"
#include "iimmr/modelio.hpp"
#include "iimmr/prompts.hpp"

namespace iimmr {

struct AnswerRunRecord {
  Prediction prediction;
  std::string answer_raw;
  std::string prompt_digest;
  std::vector<std::string> warnings;
};

inline PredMethod method_for(PathSource s) {
  switch (s) {
    case PathSource::ApCoT:
    case PathSource::ApCoT_GT: return PredMethod::ApCoT;
    case PathSource::KtPrompt: return PredMethod::KtPrompt;
    case PathSource::BaselineCoT: return PredMethod::BaselineCoT;
    case PathSource::GoldScenegraph: break;
  }
  throw PreconditionError("gold scene-graph paths are labels, not answerable paths");
}

/// Path id used in prediction records: "<source>:<item_id>".
inline std::string path_ref(const ReasoningPath& p) { return to_string(p.source) + ":" + p.item_id; }

/// Direct-answer prompt with the item image; the short answer is the first
/// line of the response with any answer label removed.
inline AnswerRunRecord answer_direct(const QAItem& item, ModelClient& client,
                                     const GenerationOptions& opts = {}) {
  PromptContext ctx;
  ctx.question = item.question;
  auto req = opts.vlm(build_prompt(PromptKind::DirectAnswer, ctx, opts.tpl()), item, opts.answer_max_tokens);
  auto resp = client.complete(req);
  AnswerRunRecord rec;
  rec.prediction.item_id = item.id;
  rec.prediction.method = PredMethod::Direct;
  rec.prediction.answer = extract_short_answer(resp.text);
  rec.answer_raw = resp.text;
  rec.prompt_digest = resp.request_digest;
  if (rec.prediction.answer.empty()) rec.warnings.push_back("empty answer");
  return rec;
}

/// Sentences verbatim, triplets as "subject relation object.", space-joined.
inline std::string render_path_text(const ReasoningPath& path) {
  std::vector<std::string> parts;
  for (const auto& step : path.steps) {
    if (const auto* s = std::get_if<SentenceStep>(&step)) {
      parts.push_back(s->text);
    } else {
      const auto& t = std::get<TripletStep>(step).value;
      parts.push_back(t.subject.str() + " " + t.relation.str() + " " + t.object.str() + ".");
    }
  }
  return text::join(parts, " ");
}

/// Question + rendered path + answer trigger, always through the
/// vision-language endpoint with the item image. A 0-step path falls back
/// to direct answering; the record keeps the path's method and a warning.
inline AnswerRunRecord answer_with_path(const QAItem& item, const ReasoningPath& path, ModelClient& client,
                                        const GenerationOptions& opts = {}) {
  if (path.item_id != item.id)
    throw PreconditionError("path for " + path.item_id + " does not belong to item " + item.id);
  auto method = method_for(path.source);
  if (path.steps.empty()) {
    auto rec = answer_direct(item, client, opts);
    rec.prediction.method = method;
    rec.prediction.path_ref = path_ref(path);
    rec.warnings.insert(rec.warnings.begin(), "empty path: direct-answer fallback");
    return rec;
  }
  PromptContext ctx;
  ctx.question = item.question;
  ctx.caption = render_path_text(path);
  auto req = opts.vlm(build_prompt(PromptKind::AnswerTrigger, ctx, opts.tpl()), item, opts.answer_max_tokens);
  auto resp = client.complete(req);
  AnswerRunRecord rec;
  rec.prediction.item_id = item.id;
  rec.prediction.method = method;
  rec.prediction.answer = extract_short_answer(resp.text);
  rec.prediction.path_ref = path_ref(path);
  rec.answer_raw = resp.text;
  rec.prompt_digest = resp.request_digest;
  if (rec.prediction.answer.empty()) rec.warnings.push_back("empty answer");
  return rec;
}

/// {item_id, method, answer, answer_raw, prompt_digest, path_ref, warnings}.
inline json answer_record_to_json(const AnswerRunRecord& r) {
  json j;
  j["item_id"] = r.prediction.item_id;
  j["method"] = to_string(r.prediction.method);
  j["answer"] = r.prediction.answer;
  j["answer_raw"] = r.answer_raw;
  j["prompt_digest"] = r.prompt_digest;
  j["path_ref"] = r.prediction.path_ref ? json(*r.prediction.path_ref) : json(nullptr);
  j["warnings"] = r.warnings;
  return j;
}

inline AnswerRunRecord answer_record_from_json(const json& j) {
  AnswerRunRecord r;
  try {
    r.prediction.item_id = j.at("item_id").get<std::string>();
    r.prediction.method = parse_method(j.at("method").get<std::string>());
    r.prediction.answer = j.at("answer").get<std::string>();
    if (j.contains("path_ref") && !j["path_ref"].is_null())
      r.prediction.path_ref = j["path_ref"].get<std::string>();
    r.answer_raw = j.value("answer_raw", std::string{});
    r.prompt_digest = j.value("prompt_digest", std::string{});
    if (j.contains("warnings")) r.warnings = j["warnings"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed prediction record: ") + e.what());
  }
  return r;
}

}  // namespace iimmr
