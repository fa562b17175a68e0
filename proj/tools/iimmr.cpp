// iimmr: command-line front end for path generation, analysis, answering,
// evaluation, augmentation and the scripted mock endpoint.

#include <chrono>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "iimmr/pipeline.hpp"

using namespace iimmr;

namespace {

struct Flags {
  std::string dataset = "gqa";
  std::string split = "val";
  std::string data;
  std::string method = "apcot";
  bool use_gold_answer = false;
  std::string detections;
  double threshold = 0.5;
  bool types = false;
  std::string endpoint;
  std::string transcript;
  std::string cache;
  std::string templates;
  std::string image_dir;
  std::string vlm_model = GenerationOptions{}.vlm_model;
  std::string llm_model = GenerationOptions{}.llm_model;
  std::string out = "run";
  std::string report_format = "md";
  std::size_t max_inflight = 4;
  bool heuristic_keywords = false;
  std::string snippets;
  std::string search_endpoint;
  std::size_t search_interval_ms = 0;
  std::size_t max_captions = kDefaultMaxCaptions;
  bool hops_over_all = false;

  RunConfig config() const {
    RunConfig c;
    c.dataset = parse_dataset(dataset);
    c.split = parse_split(split);
    c.dataset_path = data;
    c.method = parse_method(method);
    c.use_gold_answer = use_gold_answer;
    if (!detections.empty()) c.detections_path = detections;
    c.detection_threshold = threshold;
    c.analyze_types = types || !detections.empty();
    if (!endpoint.empty()) c.endpoint = endpoint;
    if (!transcript.empty()) c.transcript = transcript;
    if (!cache.empty()) c.cache_dir = cache;
    if (!templates.empty()) c.templates_dir = templates;
    if (!image_dir.empty()) c.image_dir = image_dir;
    c.vlm_model = vlm_model;
    c.llm_model = llm_model;
    c.out_dir = out;
    c.report_format = report_format;
    c.max_inflight = max_inflight;
    c.heuristic_keywords = heuristic_keywords;
    if (!snippets.empty()) c.snippet_store = snippets;
    if (!search_endpoint.empty()) c.search_endpoint = search_endpoint;
    c.search_interval_ms = search_interval_ms;
    c.max_captions = max_captions;
    c.hops_over_all = hops_over_all;
    return c;
  }
};

void add_run_flags(CLI::App* app, Flags& f) {
  app->add_option("--dataset", f.dataset, "gqa | aokvqa")->check(CLI::IsMember({"gqa", "aokvqa"}));
  app->add_option("--split", f.split, "train | val | testdev | test");
  app->add_option("--data", f.data, "Dataset file (GQA questions JSON or A-OKVQA list)")->required();
  app->add_option("--method", f.method, "direct | cot | apcot | ktprompt")
      ->check(CLI::IsMember({"direct", "cot", "apcot", "ktprompt"}));
  app->add_flag("--use-gold-answer", f.use_gold_answer, "ApCoT with the gold answer as the hint");
  app->add_option("--detections", f.detections, "Detection JSON; enables type analysis");
  app->add_option("--threshold", f.threshold, "Detection score threshold")->check(CLI::Range(0.0, 1.0));
  app->add_option("--endpoint", f.endpoint, "Completion endpoint base URL (default $IIMMR_API_BASE)");
  app->add_option("--transcript", f.transcript, "Scripted transcript (JSONL) instead of an endpoint");
  app->add_option("--cache", f.cache, "Response cache directory (default $IIMMR_CACHE_DIR)");
  app->add_option("--templates", f.templates, "Template directory");
  app->add_option("--image-dir", f.image_dir, "Prefix for image references");
  app->add_option("--vlm-model", f.vlm_model, "Vision-language model name");
  app->add_option("--llm-model", f.llm_model, "Text model name");
  app->add_option("--out", f.out, "Run directory");
  app->add_option("--report-format", f.report_format, "md | csv")->check(CLI::IsMember({"md", "csv"}));
  app->add_option("--max-inflight", f.max_inflight, "Concurrent model requests")->check(CLI::PositiveNumber);
  app->add_flag("--heuristic-keywords", f.heuristic_keywords, "Offline keyword extraction");
}

void print_report(const Run& run, const EvalReport& r) {
  std::cout << (run.config().report_format == "csv" ? render_csv(r) : render_markdown(r));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reasoning-path generation and multi-hop analysis for VQA"};
  app.require_subcommand(1);
  Flags f;

  auto* paths = app.add_subcommand("paths", "Generate reasoning paths for the configured method");
  auto* gold = app.add_subcommand("goldpaths", "Derive hop-label paths (GQA programs, A-OKVQA ApCoT-with-gold)");
  auto* analyze = app.add_subcommand("analyze", "Classify reasoning steps against detections");
  auto* answer = app.add_subcommand("answer", "Predict final answers");
  auto* eval = app.add_subcommand("eval", "Score predictions and write report files");
  auto* run = app.add_subcommand("run", "goldpaths, paths, analyze, answer and eval in order");
  auto* augment = app.add_subcommand("augment", "Rewrite questions into harder variants");
  for (auto* sub : {paths, gold, analyze, answer, eval, run, augment}) add_run_flags(sub, f);
  run->add_flag("--types", f.types, "Run type analysis (needs --detections)");
  augment->add_option("--snippets", f.snippets, "Snippet store (JSONL)");
  augment->add_option("--search-endpoint", f.search_endpoint, "Live search endpoint base URL");
  augment->add_option("--search-interval-ms", f.search_interval_ms, "Minimum spacing of search requests");
  augment->add_option("--max-captions", f.max_captions, "Captions per rewrite prompt")->check(CLI::PositiveNumber);
  augment->add_flag("--hops-over-all", f.hops_over_all, "Hop-increase denominator includes rejected rewrites");

  std::string report_file;
  std::string report_format = "md";
  auto* report = app.add_subcommand("report", "Render a saved report.json");
  report->add_option("report", report_file, "report.json or hop_increase.json")->required()->check(CLI::ExistingFile);
  report->add_option("--report-format", report_format, "md | csv | json")
      ->check(CLI::IsMember({"md", "csv", "json"}));

  auto* review = app.add_subcommand("review", "Human-review files");
  review->require_subcommand(1);
  std::string review_file, review_paths, review_preds, review_seed = "0";
  std::size_t review_n = 50;
  auto* rexport = review->add_subcommand("export", "Sample items with rationales into a CSV");
  rexport->add_option("--dataset", f.dataset)->check(CLI::IsMember({"gqa", "aokvqa"}));
  rexport->add_option("--split", f.split);
  rexport->add_option("--data", f.data, "Dataset file")->required();
  rexport->add_option("--paths", review_paths, "paths.jsonl")->required()->check(CLI::ExistingFile);
  rexport->add_option("--predictions", review_preds, "predictions.jsonl")->check(CLI::ExistingFile);
  rexport->add_option("-n", review_n, "Items to sample");
  rexport->add_option("--seed", review_seed, "Sampling seed");
  rexport->add_option("--out", review_file, "Output CSV")->required();
  auto* rscore = review->add_subcommand("score", "Percent-correct of a judged review CSV");
  rscore->add_option("file", review_file, "Judged CSV")->required()->check(CLI::ExistingFile);

  std::string host = "127.0.0.1";
  int port = 8089;
  auto* mock = app.add_subcommand("mock-serve", "Serve a transcript over the completion wire shape");
  mock->add_option("--transcript", f.transcript, "Transcript (JSONL)")->required()->check(CLI::ExistingFile);
  mock->add_option("--host", host);
  mock->add_option("--port", port, "0 picks a free port");

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      auto j = read_json_file(report_file);
      if (report_format == "json") {
        std::cout << j.dump(2) << "\n";
      } else if (j.contains("method")) {
        auto r = report_from_json(j);
        std::cout << (report_format == "csv" ? render_csv(r) : render_markdown(r));
      } else {
        throw PreconditionError("report: only evaluation reports render to md/csv; use --report-format json");
      }
      return 0;
    }
    if (rexport->parsed()) {
      auto items = load_dataset(parse_dataset(f.dataset), f.data, parse_split(f.split)).items;
      std::optional<fs::path> preds;
      if (!review_preds.empty()) preds = review_preds;
      auto n = review_export(items, review_paths, preds, review_n, review_seed, review_file);
      std::cout << "exported " << n << " item(s) to " << review_file << "\n";
      return 0;
    }
    if (rscore->parsed()) {
      auto s = review_score(review_file);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.2f", s.percent());
      std::cout << "judged " << s.judged << ", correct " << s.correct << ", unjudged " << s.unjudged
                << ", percent correct " << (s.judged ? buf : "—") << "\n";
      return 0;
    }
    if (mock->parsed()) {
      auto backend = MockBackend::from_file(f.transcript);
      http::MockServer server(*backend);
      int bound = server.start(host, port);
      std::cout << "mock-serve listening on http://" << host << ":" << bound << std::endl;
      for (;;) std::this_thread::sleep_for(std::chrono::hours(1));
    }

    if (analyze->parsed() && f.detections.empty())
      throw StageError("analyze", "type analysis requested without --detections");
    Run r(f.config());
    if (gold->parsed()) {
      std::cout << "goldpaths: " << r.stage_goldpaths() << " record(s) -> " << r.files().gold_paths() << "\n";
    } else if (paths->parsed()) {
      std::cout << "paths: " << r.stage_paths() << " record(s) -> " << r.files().paths() << "\n";
    } else if (analyze->parsed()) {
      std::cout << "analyze: " << r.stage_analyze() << " record(s) -> " << r.files().analysis() << "\n";
    } else if (answer->parsed()) {
      std::cout << "answers: " << r.stage_answers() << " record(s) -> " << r.files().predictions() << "\n";
    } else if (eval->parsed()) {
      print_report(r, r.stage_eval());
    } else if (run->parsed()) {
      r.stage_goldpaths();
      r.stage_paths();
      if (r.config().analyze_types) r.stage_analyze();
      r.stage_answers();
      print_report(r, r.stage_eval());
      auto st = r.client().stats();
      std::cerr << "model requests " << st.requests << ", cache hits " << st.cache_hits << ", backend calls "
                << st.backend_calls << "\n";
    } else if (augment->parsed()) {
      auto table = r.stage_augment();
      std::cout << (f.report_format == "csv" ? render_csv(table, f.dataset) : render_markdown(table, f.dataset));
    }
    return 0;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
