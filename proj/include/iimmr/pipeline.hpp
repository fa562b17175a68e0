#pragma once

// Run orchestration: stages over line-delimited records in a run directory,
// the run manifest, the run lock, human-review files and augmentation runs.

#include <fcntl.h>
#include <unistd.h>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "iimmr/analyzer.hpp"
#include "iimmr/answering.hpp"
#include "iimmr/augment.hpp"
#include "iimmr/datasets.hpp"
#include "iimmr/http.hpp"
#include "iimmr/metrics.hpp"
#include "iimmr/modelio.hpp"
#include "iimmr/prompts.hpp"

namespace iimmr {

struct RunConfig {
  Dataset dataset = Dataset::GQA;
  fs::path dataset_path;
  Split split = Split::Val;
  PredMethod method = PredMethod::ApCoT;
  bool use_gold_answer = false;
  std::optional<fs::path> detections_path;
  double detection_threshold = 0.5;
  bool analyze_types = false;  // run the analyze stage; requires detections
  std::optional<std::string> endpoint;
  std::optional<fs::path> transcript;  // scripted mock backend instead of an endpoint
  std::optional<fs::path> cache_dir;
  std::optional<fs::path> templates_dir;
  std::optional<fs::path> image_dir;
  std::string vlm_model = GenerationOptions{}.vlm_model;
  std::string llm_model = GenerationOptions{}.llm_model;
  std::size_t max_inflight = 4;
  fs::path out_dir = "run";
  bool heuristic_keywords = false;  // offline keyword fallback instead of the LLM
  std::string report_format = "md";
  // augmentation
  std::optional<fs::path> snippet_store;
  std::optional<std::string> search_endpoint;
  std::size_t search_interval_ms = 0;
  std::size_t max_captions = kDefaultMaxCaptions;
  bool hops_over_all = false;  // hop-increase denominator: all rewrites, not accepted only

  json to_json() const {
    auto opt = [](const auto& o) -> json {
      if (!o) return nullptr;
      if constexpr (std::is_same_v<std::decay_t<decltype(*o)>, fs::path>) return o->string();
      else return *o;
    };
    return {{"dataset", to_string(dataset)},
            {"dataset_path", dataset_path.string()},
            {"split", to_string(split)},
            {"method", to_string(method)},
            {"use_gold_answer", use_gold_answer},
            {"detections", opt(detections_path)},
            {"detection_threshold", detection_threshold},
            {"analyze_types", analyze_types},
            {"endpoint", opt(endpoint)},
            {"transcript", opt(transcript)},
            {"cache_dir", opt(cache_dir)},
            {"templates_dir", opt(templates_dir)},
            {"image_dir", opt(image_dir)},
            {"vlm_model", vlm_model},
            {"llm_model", llm_model},
            {"max_inflight", max_inflight},
            {"out_dir", out_dir.string()},
            {"heuristic_keywords", heuristic_keywords},
            {"report_format", report_format},
            {"snippet_store", opt(snippet_store)},
            {"search_endpoint", opt(search_endpoint)},
            {"search_interval_ms", search_interval_ms},
            {"max_captions", max_captions},
            {"hops_over_all", hops_over_all}};
  }
};

/// Stage output files inside the run directory.
struct RunFiles {
  fs::path dir;
  fs::path gold_paths() const { return dir / "gold_paths.jsonl"; }
  fs::path paths() const { return dir / "paths.jsonl"; }
  fs::path analysis() const { return dir / "analysis.jsonl"; }
  fs::path predictions() const { return dir / "predictions.jsonl"; }
  fs::path report(const std::string& ext) const { return dir / ("report." + ext); }
  fs::path augmented() const { return dir / "augmented.jsonl"; }
  fs::path hop_increase(const std::string& ext) const { return dir / ("hop_increase." + ext); }
  fs::path manifest() const { return dir / "manifest.json"; }
  fs::path lock() const { return dir / ".lock"; }
};

/// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(fs::path path) : path_(std::move(path)) {
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw Error("run directory is locked by another process: " + path_.string());
    auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

/// Used when neither a transcript nor an endpoint is configured: cached runs
/// still work, anything needing a model fails loudly.
class OfflineBackend final : public Backend {
 public:
  std::string generate(const ModelRequest&, const std::string& digest) override {
    throw TransportError("no model endpoint configured (request " + digest + " is not cached)", false);
  }
  std::string name() const override { return "offline"; }
};

struct StageRecord {
  std::string name;
  std::string status;  // "ok" | "failed"
  std::size_t records = 0;
  std::vector<std::string> failed_items;
  std::string error;
};

class Run {
 public:
  explicit Run(RunConfig cfg) : cfg_(std::move(cfg)), files_{cfg_.out_dir} {
    if (!fs::exists(cfg_.dataset_path))
      throw PreconditionError("dataset file does not exist: " + cfg_.dataset_path.string());
    if (cfg_.max_inflight == 0) throw PreconditionError("max_inflight must be at least 1");
    if (cfg_.report_format != "md" && cfg_.report_format != "csv")
      throw PreconditionError("report format must be md or csv");
    fs::create_directories(cfg_.out_dir);
    lock_ = std::make_unique<RunLock>(files_.lock());

    auto loaded = load_dataset(cfg_.dataset, cfg_.dataset_path, cfg_.split);
    items_ = std::move(loaded.items);
    load_report_ = std::move(loaded.report);
    templates_ = cfg_.templates_dir ? TemplateSet::load_dir(*cfg_.templates_dir) : TemplateSet::defaults();

    auto env = EndpointEnv::from_environment();
    if (cfg_.transcript) {
      backend_ = MockBackend::from_file(*cfg_.transcript);
    } else if (auto base = cfg_.endpoint ? cfg_.endpoint : env.api_base) {
      backend_ = std::make_unique<http::HttpBackend>(*base, env.api_key);
    } else {
      backend_ = std::make_unique<OfflineBackend>();
    }
    std::optional<fs::path> cache = cfg_.cache_dir;
    if (!cache && env.cache_dir) cache = fs::path(*env.cache_dir);
    client_ = std::make_unique<ModelClient>(*backend_, cache);

    opts_.vlm_model = cfg_.vlm_model;
    opts_.llm_model = cfg_.llm_model;
    opts_.image_dir = cfg_.image_dir;
    opts_.templates = &templates_;
  }

  const RunConfig& config() const { return cfg_; }
  const RunFiles& files() const { return files_; }
  const std::vector<QAItem>& items() const { return items_; }
  const LoadReport& load_report() const { return load_report_; }
  ModelClient& client() { return *client_; }
  const Backend& backend() const { return *backend_; }
  const std::vector<StageRecord>& stages() const { return stages_; }

  /// Hop labels: GQA gold paths from semantic programs (ApCoT with the gold
  /// answer when an item has no program); A-OKVQA ApCoT-with-gold paths.
  std::size_t stage_goldpaths() {
    std::vector<json> out(items_.size());
    run_items("goldpaths", [&](std::size_t i) {
      const auto& item = items_[i];
      if (item.dataset == Dataset::GQA && item.semantic_program) {
        out[i] = path_to_json(gqa_gold_path(item).path);
      } else {
        auto p = generate_path_apcot(item, *client_, true, opts_);
        if (item.dataset == Dataset::GQA) p.warnings.insert(p.warnings.begin(), "no semantic program");
        out[i] = path_to_json(p);
      }
    });
    write_jsonl(files_.gold_paths(), out);
    return finish("goldpaths", out.size());
  }

  /// Reasoning paths of the configured method (none for direct answering).
  std::size_t stage_paths() {
    if (cfg_.method == PredMethod::Direct) return finish("paths", 0);
    std::vector<json> out(items_.size());
    run_items("paths", [&](std::size_t i) {
      const auto& item = items_[i];
      ReasoningPath p;
      switch (cfg_.method) {
        case PredMethod::ApCoT: p = generate_path_apcot(item, *client_, cfg_.use_gold_answer, opts_); break;
        case PredMethod::BaselineCoT: p = generate_path_cot(item, *client_, opts_); break;
        case PredMethod::KtPrompt: p = generate_path_ktprompt(item, *client_, opts_); break;
        case PredMethod::Direct: break;
      }
      out[i] = path_to_json(p);
    });
    write_jsonl(files_.paths(), out);
    return finish("paths", out.size());
  }

  /// Per-step keyword matching against detections; analyses the method paths
  /// when there are any, else the hop-label paths.
  std::size_t stage_analyze() {
    DetectionIndex detections;
    try {
      if (!cfg_.detections_path) throw PreconditionError("type analysis requested without a detection file");
      if (!fs::exists(*cfg_.detections_path))
        throw PreconditionError("detection file does not exist: " + cfg_.detections_path->string());
      detections = load_detections(*cfg_.detections_path, cfg_.detection_threshold);
    } catch (const Error& e) {
      fail("analyze", {}, e.what());
    }
    auto source_file = cfg_.method != PredMethod::Direct && fs::exists(files_.paths()) ? files_.paths()
                                                                                        : files_.gold_paths();
    auto paths = load_paths("analyze", source_file);
    KeywordSource ks;
    ks.options = opts_;
    ks.fallback = cfg_.heuristic_keywords;
    ks.client = cfg_.heuristic_keywords ? nullptr : client_.get();

    std::vector<json> out(items_.size());
    run_items("analyze", [&](std::size_t i) {
      const auto& item = items_[i];
      const auto& path = paths.at(item.id);
      json steps = json::array();
      std::vector<StepAnalysis> analyses;
      for (std::size_t s = 0; s < path.steps.size(); ++s) {
        auto a = classify_step(path.steps[s], detections.for_image(item.image_id), ks, s);
        json kws = json::array();
        for (const auto& k : a.keywords) kws.push_back(k.str());
        steps.push_back({{"index", s},
                         {"keywords", kws},
                         {"matched", a.matched},
                         {"reasoning_type", to_string(a.reasoning_type)},
                         {"heuristic_keywords", a.heuristic_keywords}});
        analyses.push_back(std::move(a));
      }
      json rec{{"item_id", item.id}, {"source", to_string(path.source)}, {"steps", steps}};
      rec["reasoning_type"] = analyses.empty() ? json(nullptr) : json(to_string(classify_question(analyses)));
      out[i] = std::move(rec);
    });
    write_jsonl(files_.analysis(), out);
    return finish("analyze", out.size());
  }

  std::size_t stage_answers() {
    std::map<std::string, ReasoningPath> paths;
    if (cfg_.method != PredMethod::Direct) paths = load_paths("answers", files_.paths());
    std::vector<json> out(items_.size());
    run_items("answers", [&](std::size_t i) {
      const auto& item = items_[i];
      auto rec = cfg_.method == PredMethod::Direct ? answer_direct(item, *client_, opts_)
                                                   : answer_with_path(item, paths.at(item.id), *client_, opts_);
      out[i] = answer_record_to_json(rec);
    });
    write_jsonl(files_.predictions(), out);
    return finish("answers", out.size());
  }

  EvalReport stage_eval() {
    try {
      auto report = evaluate_files();
      write_file_atomic(files_.report("json"), report_to_json(report).dump(2) + "\n");
      write_file_atomic(files_.report("md"), render_markdown(report));
      write_file_atomic(files_.report("csv"), render_csv(report));
      finish("eval", report.total);
      return report;
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      fail("eval", {}, e.what());
    }
  }

  /// Rewrites each item through retrieval + the 5-shot prompt and reports
  /// hop increases measured with gold-answer ApCoT paths on both versions.
  HopIncreaseTable stage_augment() {
    std::unique_ptr<SnippetSource> source;
    SnippetStore store;
    if (cfg_.snippet_store) {
      store = load_snippet_store(*cfg_.snippet_store);
      source = std::make_unique<StoreSnippetSource>(store);
    } else if (cfg_.search_endpoint) {
      source = std::make_unique<http::HttpSnippetSource>(
          *cfg_.search_endpoint, std::chrono::milliseconds(cfg_.search_interval_ms));
    } else {
      fail("augment", {}, "augmentation needs a snippet store or a search endpoint");
    }
    std::vector<AugmentedItem> augmented(items_.size());
    std::vector<std::optional<HopPair>> hops(items_.size());
    run_items("augment", [&](std::size_t i) {
      const auto& item = items_[i];
      augmented[i] = augment_item(item, cfg_.heuristic_keywords ? nullptr : client_.get(), *source, *client_,
                                  cfg_.max_captions, opts_);
      const auto& a = augmented[i];
      if (a.complex_question.empty() || !(a.accepted || cfg_.hops_over_all)) return;
      QAItem rewritten = item;
      rewritten.question = a.complex_question;
      rewritten.semantic_program.reset();
      auto before = generate_path_apcot(item, *client_, true, opts_);
      auto after = generate_path_apcot(rewritten, *client_, true, opts_);
      hops[i] = HopPair{count_hops(before), count_hops(after)};
    });
    std::vector<json> out;
    std::vector<HopPair> pairs;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      auto rec = augmented_to_json(augmented[i]);
      if (hops[i]) {
        rec["original_hops"] = hops[i]->original.value;
        rec["augmented_hops"] = hops[i]->augmented.value;
        pairs.push_back(*hops[i]);
      }
      out.push_back(std::move(rec));
    }
    write_jsonl(files_.augmented(), out);
    auto table = hop_increase_report(pairs);
    write_file_atomic(files_.hop_increase("json"), hop_increase_to_json(table).dump(2) + "\n");
    write_file_atomic(files_.hop_increase("md"), render_markdown(table, to_string(cfg_.dataset)));
    write_file_atomic(files_.hop_increase("csv"), render_csv(table, to_string(cfg_.dataset)));
    finish("augment", out.size());
    return table;
  }

  json manifest() const {
    json m;
    m["config"] = cfg_.to_json();
    m["templates"] = templates_.manifest();
    json data{{"dataset", {{"path", cfg_.dataset_path.string()}, {"sha256", file_digest(cfg_.dataset_path)}}}};
    if (cfg_.detections_path && fs::exists(*cfg_.detections_path))
      data["detections"] = {{"path", cfg_.detections_path->string()},
                            {"sha256", file_digest(*cfg_.detections_path)}};
    if (cfg_.snippet_store && fs::exists(*cfg_.snippet_store))
      data["snippet_store"] = {{"path", cfg_.snippet_store->string()}, {"sha256", file_digest(*cfg_.snippet_store)}};
    m["inputs"] = data;
    m["load_report"] = {{"items", items_.size()},
                        {"errors", load_report_.errors.size()},
                        {"flagged", load_report_.flagged.size()}};
    json stages = json::array();
    for (const auto& s : stages_) {
      json j{{"name", s.name}, {"status", s.status}, {"records", s.records}};
      if (!s.failed_items.empty()) j["failed_items"] = s.failed_items;
      if (!s.error.empty()) j["error"] = s.error;
      stages.push_back(std::move(j));
    }
    m["stages"] = stages;
    auto st = client_->stats();
    m["model_calls"] = {{"backend", backend_->name()},
                        {"requests", st.requests},
                        {"cache_hits", st.cache_hits},
                        {"backend_calls", st.backend_calls},
                        {"retries", st.retries}};
    return m;
  }

  void write_manifest() const { write_file_atomic(files_.manifest(), manifest().dump(2) + "\n"); }

 private:
  template <typename Fn>
  void run_items(const std::string& stage, Fn fn) {
    auto errors = parallel_for_index(items_.size(), cfg_.max_inflight, fn);
    std::vector<std::string> failed;
    std::string first;
    for (std::size_t i = 0; i < errors.size(); ++i) {
      if (!errors[i]) continue;
      failed.push_back(items_[i].id);
      if (first.empty()) {
        try {
          std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
          first = items_[i].id + ": " + e.what();
        }
      }
    }
    if (!failed.empty()) fail(stage, failed, first);
  }

  [[noreturn]] void fail(const std::string& stage, std::vector<std::string> failed, const std::string& error) {
    stages_.push_back({stage, "failed", 0, failed, error});
    write_manifest();
    std::string msg = error;
    if (!failed.empty()) msg += " (failed items: " + text::join(failed, ", ") + ")";
    throw StageError(stage, msg);
  }

  std::size_t finish(const std::string& stage, std::size_t records) {
    stages_.push_back({stage, "ok", records, {}, {}});
    write_manifest();
    return records;
  }

  std::map<std::string, ReasoningPath> load_paths(const std::string& stage, const fs::path& file) {
    std::map<std::string, ReasoningPath> paths;
    try {
      if (!fs::exists(file)) throw PreconditionError("missing stage input " + file.string());
      for (const auto& rec : read_jsonl(file)) {
        auto p = path_from_json(rec);
        paths.emplace(p.item_id, std::move(p));
      }
      std::vector<std::string> missing;
      for (const auto& it : items_) {
        if (!paths.contains(it.id)) missing.push_back(it.id);
      }
      if (!missing.empty()) fail(stage, missing, file.filename().string() + " has no path for some items");
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      fail(stage, {}, e.what());
    }
    return paths;
  }

  EvalReport evaluate_files() {
    std::map<std::string, ReasoningPath> gold = load_paths("eval", files_.gold_paths());
    std::map<std::string, HopCount> labels;
    for (const auto& [id, p] : gold) labels[id] = count_hops(p);

    if (!fs::exists(files_.predictions())) throw PreconditionError("missing stage input " + files_.predictions().string());
    std::vector<Prediction> preds;
    for (const auto& rec : read_jsonl(files_.predictions())) {
      auto r = answer_record_from_json(rec);
      if (r.prediction.method != cfg_.method)
        throw PreconditionError("predictions were made with method " + to_string(r.prediction.method) +
                                ", run is configured for " + to_string(cfg_.method));
      preds.push_back(std::move(r.prediction));
    }

    std::map<std::string, ReasoningType> types;
    bool have_types = cfg_.analyze_types && fs::exists(files_.analysis());
    if (have_types) {
      for (const auto& rec : read_jsonl(files_.analysis())) {
        if (rec.contains("reasoning_type") && rec["reasoning_type"].is_string())
          types[rec["item_id"].get<std::string>()] = parse_reasoning_type(rec["reasoning_type"].get<std::string>());
      }
    }
    EvalReport report = evaluate_run(preds, items_, labels, have_types ? &types : nullptr);

    if (cfg_.method != PredMethod::Direct) {
      auto paths = load_paths("eval", files_.paths());
      std::map<std::string, HopCount> predicted;
      for (const auto& [id, p] : paths) predicted[id] = count_hops(p);
      report.hop_prediction = hop_prediction_report(predicted, labels);
      bool triplet_labels = std::all_of(gold.begin(), gold.end(), [](const auto& kv) {
        return kv.second.source == PathSource::GoldScenegraph;
      });
      if (cfg_.method == PredMethod::KtPrompt && triplet_labels) report.path_match = path_match_report(paths, gold);
    }
    return report;
  }

  RunConfig cfg_;
  RunFiles files_;
  std::unique_ptr<RunLock> lock_;
  std::vector<QAItem> items_;
  LoadReport load_report_;
  TemplateSet templates_;
  std::unique_ptr<Backend> backend_;
  std::unique_ptr<ModelClient> client_;
  GenerationOptions opts_;
  std::vector<StageRecord> stages_;
};

struct RunArtifacts {
  RunFiles files;
  EvalReport report;
  ClientStats stats;
};

/// goldpaths -> paths -> analyze (when requested) -> answers -> eval.
inline RunArtifacts run_pipeline(const RunConfig& cfg) {
  Run run(cfg);
  run.stage_goldpaths();
  run.stage_paths();
  if (cfg.analyze_types) run.stage_analyze();
  run.stage_answers();
  auto report = run.stage_eval();
  return {run.files(), report, run.client().stats()};
}

// ---------------------------------------------------------------------------
// Human review files

struct ReviewScore {
  std::size_t judged = 0;
  std::size_t correct = 0;
  std::size_t unjudged = 0;
  double percent() const { return judged ? 100.0 * static_cast<double>(correct) / static_cast<double>(judged) : 0.0; }
};

inline const std::vector<std::string>& review_columns() {
  static const std::vector<std::string> cols = {"item_id", "question", "gold_answer", "prediction", "rationale",
                                                "judgment"};
  return cols;
}

/// Picks n items with paths, ordered by sha256(seed:id), and writes a CSV
/// with an empty judgment column.
inline std::size_t review_export(const std::vector<QAItem>& items, const fs::path& paths_file,
                                 const std::optional<fs::path>& predictions_file, std::size_t n,
                                 const std::string& seed, const fs::path& out) {
  std::map<std::string, ReasoningPath> paths;
  for (const auto& rec : read_jsonl(paths_file)) {
    auto p = path_from_json(rec);
    paths.emplace(p.item_id, std::move(p));
  }
  std::map<std::string, std::string> answers;
  if (predictions_file) {
    for (const auto& rec : read_jsonl(*predictions_file)) {
      auto r = answer_record_from_json(rec);
      answers[r.prediction.item_id] = r.prediction.answer;
    }
  }
  std::vector<std::pair<std::string, const QAItem*>> order;
  for (const auto& it : items) {
    if (paths.contains(it.id)) order.emplace_back(sha256_hex(seed + ":" + it.id), &it);
  }
  std::sort(order.begin(), order.end());
  if (order.size() > n) order.resize(n);
  std::string csv = csv_row(review_columns());
  for (const auto& [key, item] : order) {
    const auto& p = paths.at(item->id);
    std::string rationale = p.raw_model_text.empty() ? render_path_text(p) : p.raw_model_text;
    auto ans = answers.find(item->id);
    csv += csv_row({item->id, item->question, item->primary_answer(), ans == answers.end() ? "" : ans->second,
                    rationale, ""});
  }
  write_file_atomic(out, csv);
  return order.size();
}

/// Judgments: 1/0, yes/no, true/false, correct/incorrect; blank = unjudged.
inline ReviewScore review_score(const fs::path& file) {
  auto rows = parse_csv(read_file(file));
  if (rows.empty()) throw ParseError("review file is empty: " + file.string());
  auto col = std::find(rows[0].begin(), rows[0].end(), "judgment");
  if (col == rows[0].end()) throw ParseError("review file has no judgment column: " + file.string());
  auto idx = static_cast<std::size_t>(col - rows[0].begin());
  ReviewScore s;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    auto v = idx < rows[r].size() ? text::lower(text::trim(rows[r][idx])) : std::string{};
    if (v.empty()) {
      ++s.unjudged;
    } else if (v == "1" || v == "yes" || v == "true" || v == "correct") {
      ++s.judged;
      ++s.correct;
    } else if (v == "0" || v == "no" || v == "false" || v == "incorrect") {
      ++s.judged;
    } else {
      throw ParseError("review file row " + std::to_string(r + 1) + ": unrecognised judgment \"" + v + "\"");
    }
  }
  return s;
}

}  // namespace iimmr
