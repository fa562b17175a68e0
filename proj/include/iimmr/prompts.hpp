#pragma once

// Prompt construction from versioned "{slot}" templates.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "iimmr/error.hpp"
#include "iimmr/io.hpp"
#include "iimmr/text.hpp"

namespace iimmr {

enum class PromptKind {
  DirectAnswer,
  BaselineCoT,
  ApCoT,
  CaptionFromQA,
  TripletExtraction,
  KeywordExtraction,
  AnswerTrigger,
  Augmentation,
};

inline constexpr std::array<PromptKind, 8> kAllPromptKinds = {
    PromptKind::DirectAnswer,      PromptKind::BaselineCoT,      PromptKind::ApCoT,
    PromptKind::CaptionFromQA,     PromptKind::TripletExtraction, PromptKind::KeywordExtraction,
    PromptKind::AnswerTrigger,     PromptKind::Augmentation};

inline std::string to_string(PromptKind k) {
  switch (k) {
    case PromptKind::DirectAnswer: return "direct_answer";
    case PromptKind::BaselineCoT: return "baseline_cot";
    case PromptKind::ApCoT: return "apcot";
    case PromptKind::CaptionFromQA: return "caption_from_qa";
    case PromptKind::TripletExtraction: return "triplet_extraction";
    case PromptKind::KeywordExtraction: return "keyword_extraction";
    case PromptKind::AnswerTrigger: return "answer_trigger";
    case PromptKind::Augmentation: return "augmentation";
  }
  return "?";
}

inline std::string template_file_name(PromptKind k) { return to_string(k) + ".txt"; }

inline constexpr std::string_view kAnswerTrigger = "Therefore, short answer:";
inline constexpr std::string_view kStepByStep = "Let's think step by step";

inline const std::array<std::string, 7>& augmentation_part_names() {
  static const std::array<std::string, 7> names = {
      "Task",         "Original Question", "Original Short Answer", "Captions",
      "Bridge Entity", "Complex Question", "Short Answer"};
  return names;
}

/// Ordered named parts, rendered "Name: value" one per line.
struct FewShotExample {
  std::vector<std::pair<std::string, std::string>> parts;
};

struct PromptContext {
  std::optional<std::string> question;
  std::optional<std::string> answer_hint;
  std::optional<std::string> gold_answer;
  std::optional<std::string> caption;
  std::optional<std::string> sentence;
  std::optional<std::vector<std::string>> captions;
  std::optional<std::string> bridge_entity;
  std::vector<FewShotExample> few_shot;  // empty => the kind's defaults
};

inline const std::string& augmentation_task_text() {
  static const std::string task =
      "Using the captions, rewrite the original question into a more complex question that "
      "needs one more reasoning step through the bridge entity. The complex question must keep "
      "the original short answer.";
  return task;
}

inline const std::string& triplet_task_text() {
  static const std::string task =
      "Extract the knowledge triplets stated in the caption, one per line, as (subject, "
      "relation, object).";
  return task;
}

inline std::vector<FewShotExample> default_few_shot(PromptKind kind) {
  if (kind == PromptKind::TripletExtraction) {
    auto ex = [](std::string caption, std::string triplets) {
      return FewShotExample{{{"Task", triplet_task_text()},
                             {"Caption", std::move(caption)},
                             {"Triplets", std::move(triplets)}}};
    };
    return {
        ex("Buddy Hield, the MVP of the 2015 Diamond Head Classic, plays for the Sacramento Kings.",
           "(Buddy Hield, MVP, Diamond Head Classic)\n(Buddy Hield, PlayFor, Sacramento Kings)"),
        ex("The surfer is wearing a wetsuit.", "(surfer, wearing, wetsuit)"),
        ex("The banana on the table is yellow.", "(banana, on, table)\n(banana, color, yellow)"),
    };
  }
  if (kind == PromptKind::Augmentation) {
    auto ex = [](std::string q, std::string a, std::string caps, std::string bridge,
                 std::string complex) {
      const auto& n = augmentation_part_names();
      return FewShotExample{{{n[0], augmentation_task_text()},
                             {n[1], std::move(q)},
                             {n[2], a},
                             {n[3], std::move(caps)},
                             {n[4], std::move(bridge)},
                             {n[5], std::move(complex)},
                             {n[6], a}}};
    };
    return {
        ex("What is the surfer wearing?", "wetsuit",
           "A wetsuit is a garment worn to provide thermal protection while wet.", "surfer",
           "What is the garment used for thermal protection that the person riding the wave is "
           "wearing?"),
        ex("What color is the banana?", "yellow",
           "The banana is an elongated, edible fruit produced by plants in the genus Musa.",
           "banana", "What color is the elongated fruit produced by plants of the genus Musa?"),
        ex("Is this a truck?", "no",
           "A truck is a motor vehicle designed to transport cargo.", "truck",
           "Is this a motor vehicle designed to transport cargo?"),
        ex("What animal is on the bed?", "cat",
           "The cat is a small domesticated carnivorous mammal often kept as a pet.", "bed",
           "What small domesticated pet is resting on the furniture used for sleeping?"),
        ex("What is the man holding?", "umbrella",
           "An umbrella is a folding canopy that protects against rain or sunlight.", "man",
           "What folding canopy used against rain is the adult male holding?"),
    };
  }
  return {};
}

/// Built-in template text, written to follow the structure of the original
/// prompt figures. These are approximations of images, not transcriptions.
inline std::string default_template(PromptKind kind) {
  switch (kind) {
    case PromptKind::DirectAnswer:
      return "Question: {question} Short answer:";
    case PromptKind::BaselineCoT:
      return "Question: {question}\nAnswer: Let's think step by step.";
    case PromptKind::ApCoT:
      return "Question: {question}\nA possible answer is: {answer_hint}. Let's think step by step "
             "and explain what in the image leads to the correct answer.\nRationale:";
    case PromptKind::CaptionFromQA:
      return "Convert the question and its answer into one natural, declarative caption.\n"
             "Question: {question}\nAnswer: {gold_answer}\nCaption:";
    case PromptKind::TripletExtraction:
      return "{few_shot}\n\nTask: Extract the knowledge triplets stated in the caption, one per "
             "line, as (subject, relation, object).\nCaption: {caption}\nTriplets:";
    case PromptKind::KeywordExtraction:
      return "Extract the keywords (objects, entities and concepts) mentioned in the sentence. "
             "Answer with a comma-separated list.\nSentence: {sentence}\nKeywords:";
    case PromptKind::AnswerTrigger:
      return "Question: {question}\n{caption}\nTherefore, short answer:";
    case PromptKind::Augmentation:
      return "{few_shot}\n\nTask: Using the captions, rewrite the original question into a more "
             "complex question that needs one more reasoning step through the bridge entity. The "
             "complex question must keep the original short answer.\nOriginal Question: "
             "{question}\nOriginal Short Answer: {gold_answer}\nCaptions: {captions}\nBridge "
             "Entity: {bridge_entity}\nComplex Question:";
  }
  return {};
}

inline std::vector<std::string> required_fields(PromptKind kind) {
  switch (kind) {
    case PromptKind::DirectAnswer:
    case PromptKind::BaselineCoT: return {"question"};
    case PromptKind::ApCoT: return {"question", "answer_hint"};
    case PromptKind::CaptionFromQA: return {"question", "gold_answer"};
    case PromptKind::TripletExtraction: return {"caption"};
    case PromptKind::KeywordExtraction: return {"sentence"};
    case PromptKind::AnswerTrigger: return {"question", "caption"};
    case PromptKind::Augmentation: return {"question", "gold_answer", "captions", "bridge_entity"};
  }
  return {};
}

namespace detail {

inline const std::array<std::string_view, 8>& slot_names() {
  static const std::array<std::string_view, 8> names = {
      "question", "answer_hint", "gold_answer", "caption",
      "sentence", "captions",    "bridge_entity", "few_shot"};
  return names;
}

// Literal text and slot references; "{{" and "}}" escape braces.
struct TemplatePiece {
  bool is_slot = false;
  std::string text;
};

inline std::vector<TemplatePiece> parse_template(std::string_view tpl, std::string_view origin) {
  std::vector<TemplatePiece> pieces;
  std::string lit;
  for (std::size_t i = 0; i < tpl.size(); ++i) {
    char c = tpl[i];
    if (c == '{' && i + 1 < tpl.size() && tpl[i + 1] == '{') {
      lit += '{';
      ++i;
    } else if (c == '}' && i + 1 < tpl.size() && tpl[i + 1] == '}') {
      lit += '}';
      ++i;
    } else if (c == '{') {
      auto close = tpl.find('}', i);
      if (close == std::string_view::npos)
        throw ParseError("template " + std::string(origin) + ": unterminated slot");
      std::string name(tpl.substr(i + 1, close - i - 1));
      if (std::find(slot_names().begin(), slot_names().end(), name) == slot_names().end())
        throw ParseError("template " + std::string(origin) + ": unknown slot {" + name + "}");
      if (!lit.empty()) pieces.push_back({false, std::exchange(lit, {})});
      pieces.push_back({true, name});
      i = close;
    } else if (c == '}') {
      throw ParseError("template " + std::string(origin) + ": stray '}'");
    } else {
      lit += c;
    }
  }
  if (!lit.empty()) pieces.push_back({false, lit});
  return pieces;
}

inline std::string render_few_shot(const std::vector<FewShotExample>& examples) {
  std::vector<std::string> blocks;
  for (const auto& ex : examples) {
    std::string block;
    for (const auto& [name, value] : ex.parts) {
      if (!block.empty()) block += '\n';
      block += name + ":" + (value.find('\n') != std::string::npos ? "\n" : " ") + value;
    }
    blocks.push_back(std::move(block));
  }
  return text::join(blocks, "\n\n");
}

}  // namespace detail

/// One template per PromptKind plus its content hash.
class TemplateSet {
 public:
  static TemplateSet defaults() {
    TemplateSet set;
    for (auto k : kAllPromptKinds) set.set(k, default_template(k));
    set.approximation_ = true;
    return set;
  }

  /// Reads <dir>/<kind>.txt for every kind. Trailing whitespace is dropped.
  static TemplateSet load_dir(const fs::path& dir) {
    TemplateSet set;
    for (auto k : kAllPromptKinds) {
      auto path = dir / template_file_name(k);
      if (!fs::exists(path)) throw ParseError("template directory lacks " + path.string());
      auto body = read_file(path);
      while (!body.empty() && text::is_space(body.back())) body.pop_back();
      set.set(k, body);
    }
    auto manifest = dir / "manifest.json";
    if (fs::exists(manifest)) set.approximation_ = read_json_file(manifest).value("approximation", false);
    return set;
  }

  void set(PromptKind kind, std::string body) {
    detail::parse_template(body, to_string(kind));
    templates_[kind] = std::move(body);
  }

  const std::string& get(PromptKind kind) const { return templates_.at(kind); }
  std::string hash(PromptKind kind) const { return sha256_hex(get(kind)); }

  json manifest() const {
    json m;
    m["approximation"] = approximation_;
    json t = json::object();
    for (auto k : kAllPromptKinds) {
      t[to_string(k)] = {{"file", template_file_name(k)}, {"sha256", hash(k)}};
    }
    m["templates"] = t;
    return m;
  }

  void write_dir(const fs::path& dir) const {
    for (auto k : kAllPromptKinds) write_file_atomic(dir / template_file_name(k), get(k) + "\n");
    write_file_atomic(dir / "manifest.json", manifest().dump(2) + "\n");
  }

 private:
  std::map<PromptKind, std::string> templates_;
  bool approximation_ = false;
};

namespace detail {

inline std::optional<std::string> field_value(const PromptContext& ctx, std::string_view name) {
  if (name == "question") return ctx.question;
  if (name == "answer_hint") return ctx.answer_hint;
  if (name == "gold_answer") return ctx.gold_answer;
  if (name == "caption") return ctx.caption;
  if (name == "sentence") return ctx.sentence;
  if (name == "bridge_entity") return ctx.bridge_entity;
  if (name == "captions") {
    if (!ctx.captions) return std::nullopt;
    return text::join(*ctx.captions, " ");
  }
  return std::nullopt;
}

inline void check_few_shot(PromptKind kind, const std::vector<FewShotExample>& examples) {
  if (kind != PromptKind::Augmentation) return;
  const auto& names = augmentation_part_names();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& parts = examples[i].parts;
    bool ok = parts.size() == names.size();
    for (std::size_t p = 0; ok && p < names.size(); ++p) ok = parts[p].first == names[p];
    if (!ok)
      throw PreconditionError("augmentation few-shot example " + std::to_string(i) +
                              " must carry the seven parts in order");
  }
}

}  // namespace detail

inline const TemplateSet& default_templates() {
  static const TemplateSet set = TemplateSet::defaults();
  return set;
}

/// Fills every slot of the kind's template from ctx. Values are inserted
/// verbatim and never rescanned for slots.
inline std::string build_prompt(PromptKind kind, const PromptContext& ctx,
                                const TemplateSet& templates = default_templates()) {
  for (const auto& f : required_fields(kind)) {
    auto v = detail::field_value(ctx, f);
    if (!v || text::trim(*v).empty() || (f == "captions" && ctx.captions->empty()))
      throw PreconditionError("prompt " + to_string(kind) + ": missing required field \"" + f + "\"");
  }
  const auto& few_shot = ctx.few_shot.empty() ? default_few_shot(kind) : ctx.few_shot;
  detail::check_few_shot(kind, few_shot);

  std::string out;
  for (const auto& piece : detail::parse_template(templates.get(kind), to_string(kind))) {
    if (!piece.is_slot) {
      out += piece.text;
    } else if (piece.text == "few_shot") {
      if (few_shot.empty())
        throw PreconditionError("prompt " + to_string(kind) + ": template uses {few_shot} but none given");
      out += detail::render_few_shot(few_shot);
    } else {
      auto v = detail::field_value(ctx, piece.text);
      if (!v)
        throw PreconditionError("prompt " + to_string(kind) + ": missing field \"" + piece.text + "\"");
      out += *v;
    }
  }
  if (kind == PromptKind::AnswerTrigger && !text::ends_with(out, kAnswerTrigger))
    throw PreconditionError("answer_trigger template must end with \"" + std::string(kAnswerTrigger) + "\"");
  return out;
}

/// Short-answer extraction: first non-blank line, minus a leading
/// "Answer:" / "Short answer:" label, trimmed.
inline std::string extract_short_answer(std::string_view response) {
  std::string line;
  for (const auto& l : text::split_lines(response)) {
    if (!text::trim(l).empty()) {
      line = std::string(text::trim(l));
      break;
    }
  }
  for (std::string_view prefix : {"short answer:", "answer:"}) {
    if (text::starts_with_icase(line, prefix)) {
      line = std::string(text::trim(std::string_view(line).substr(prefix.size())));
      break;
    }
  }
  return line;
}

}  // namespace iimmr
