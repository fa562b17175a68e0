#pragma once

// Client side of the text / vision-language model endpoints: request
// digests, an append-only response cache, the scripted mock backend and a
// retrying client that every other module goes through.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "iimmr/error.hpp"
#include "iimmr/io.hpp"
#include "iimmr/text.hpp"

namespace iimmr {

struct ModelRequest {
  std::string model_name;
  std::string prompt;
  std::optional<std::string> image_ref;  // present => vision-language route
  int max_tokens = 256;
  double temperature = 0.0;
  std::vector<std::string> stop_sequences;

  void validate() const {
    if (prompt.empty()) throw PreconditionError("model request: empty prompt");
    if (max_tokens <= 0) throw PreconditionError("model request: max_tokens must be positive");
    if (!(temperature >= 0.0)) throw PreconditionError("model request: negative temperature");
  }

  // Field names sorted (nlohmann objects are ordered maps); prompt bytes
  // verbatim.
  json canonical() const {
    json j;
    j["image_ref"] = image_ref ? json(*image_ref) : json(nullptr);
    j["max_tokens"] = max_tokens;
    j["model_name"] = model_name;
    j["prompt"] = prompt;
    j["stop_sequences"] = stop_sequences;
    j["temperature"] = temperature;
    return j;
  }
};

/// SHA-256 hex digest of the canonical request serialization.
inline std::string cache_key(const ModelRequest& request) {
  return sha256_hex(request.canonical().dump());
}

struct ModelResponse {
  std::string text;
  std::string request_digest;
  bool from_cache = false;
  double latency_ms = 0.0;
};

/// Cuts text at the earliest occurrence of any stop sequence.
inline std::string apply_stop_sequences(std::string text, const std::vector<std::string>& stops) {
  std::size_t cut = text.size();
  for (const auto& s : stops) {
    if (s.empty()) continue;
    auto pos = text.find(s);
    if (pos != std::string::npos) cut = std::min(cut, pos);
  }
  text.resize(cut);
  return text;
}

class Backend {
 public:
  virtual ~Backend() = default;
  // Returns the raw completion text. May throw TransportError.
  virtual std::string generate(const ModelRequest& request, const std::string& digest) = 0;
  virtual std::string name() const = 0;
};

struct TranscriptRule {
  std::optional<std::string> digest;
  std::optional<std::string> prompt_substring;
  std::string response_text;
};

/// Scripted backend for hermetic runs. Exact digest rules win; otherwise
/// substring rules are tried in file order and the first match answers.
/// Requests matching nothing raise UnscriptedRequest.
class MockBackend final : public Backend {
 public:
  MockBackend() = default;
  explicit MockBackend(std::vector<TranscriptRule> rules) {
    for (auto& r : rules) add(std::move(r));
  }

  static std::vector<TranscriptRule> load_rules(const fs::path& path) {
    std::vector<TranscriptRule> rules;
    for (const auto& rec : read_jsonl(path)) {
      if (!rec.is_object() || !rec.contains("response_text") || !rec["response_text"].is_string())
        throw ParseError("transcript " + path.string() + ": record needs response_text");
      TranscriptRule rule;
      rule.response_text = rec["response_text"].get<std::string>();
      if (rec.contains("digest") && rec["digest"].is_string())
        rule.digest = rec["digest"].get<std::string>();
      if (rec.contains("prompt_substring") && rec["prompt_substring"].is_string())
        rule.prompt_substring = rec["prompt_substring"].get<std::string>();
      if (!rule.digest && !rule.prompt_substring)
        throw ParseError("transcript " + path.string() + ": record needs digest or prompt_substring");
      rules.push_back(std::move(rule));
    }
    return rules;
  }

  static std::unique_ptr<MockBackend> from_file(const fs::path& path) {
    return std::make_unique<MockBackend>(load_rules(path));
  }

  void add(TranscriptRule rule) {
    if (rule.digest) {
      by_digest_.emplace_back(*rule.digest, rule.response_text);
    } else if (rule.prompt_substring) {
      by_substring_.emplace_back(*rule.prompt_substring, rule.response_text);
    } else {
      throw PreconditionError("transcript rule needs a digest or a prompt substring");
    }
  }

  std::string generate(const ModelRequest& request, const std::string& digest) override {
    ++calls_;
    for (const auto& [d, text] : by_digest_) {
      if (d == digest) return text;
    }
    for (const auto& [sub, text] : by_substring_) {
      if (request.prompt.find(sub) != std::string::npos) return text;
    }
    throw UnscriptedRequest(digest);
  }

  std::string name() const override { return "mock"; }
  std::size_t calls() const { return calls_.load(); }

 private:
  std::vector<std::pair<std::string, std::string>> by_digest_;
  std::vector<std::pair<std::string, std::string>> by_substring_;
  std::atomic<std::size_t> calls_{0};
};

/// One file per digest under a two-level fan-out: <dir>/ab/cd/<digest>.json.
/// Entries are written once and never replaced.
class ResponseCache {
 public:
  explicit ResponseCache(fs::path dir) : dir_(std::move(dir)) {}

  fs::path entry_path(const std::string& digest) const {
    return dir_ / digest.substr(0, 2) / digest.substr(2, 2) / (digest + ".json");
  }

  std::optional<std::string> get(const std::string& digest) const {
    auto path = entry_path(digest);
    std::error_code ec;
    if (!fs::exists(path, ec)) return std::nullopt;
    auto entry = read_json_file(path);
    if (!entry.is_object() || entry.value("digest", std::string{}) != digest ||
        !entry.contains("text") || !entry["text"].is_string())
      throw ParseError("corrupt cache entry: " + path.string());
    return entry["text"].get<std::string>();
  }

  // Returns false if an entry already existed (first writer wins).
  bool put(const std::string& digest, const ModelRequest& request, const std::string& text) {
    json entry;
    entry["digest"] = digest;
    entry["request"] = request.canonical();
    entry["text"] = text;
    return write_file_once(entry_path(digest), entry.dump(2) + "\n");
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{200};
  double backoff_factor = 2.0;
};

struct ClientStats {
  std::size_t requests = 0;
  std::size_t cache_hits = 0;
  std::size_t backend_calls = 0;
  std::size_t retries = 0;
};

/// Thread-safe front door to a backend. On a cache hit no backend call is
/// made; on a miss the raw completion is persisted before being returned.
/// Stop sequences are applied to the returned text, never to the cache.
class ModelClient {
 public:
  ModelClient(Backend& backend, std::optional<fs::path> cache_dir = std::nullopt,
              RetryPolicy retry = {})
      : backend_(backend), retry_(retry) {
    if (cache_dir) cache_.emplace(*cache_dir);
  }

  ModelResponse complete(const ModelRequest& request) {
    request.validate();
    auto start = std::chrono::steady_clock::now();
    ModelResponse resp;
    resp.request_digest = cache_key(request);
    ++requests_;

    std::optional<std::string> raw;
    if (cache_) raw = cache_->get(resp.request_digest);
    if (raw) {
      ++cache_hits_;
      resp.from_cache = true;
    } else {
      raw = call_with_retries(request, resp.request_digest);
      if (cache_) {
        // A concurrent writer may have won; the stored bytes are authoritative.
        if (!cache_->put(resp.request_digest, request, *raw)) raw = cache_->get(resp.request_digest);
      }
    }
    resp.text = apply_stop_sequences(*raw, request.stop_sequences);
    resp.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return resp;
  }

  ClientStats stats() const {
    return {requests_.load(), cache_hits_.load(), backend_calls_.load(), retries_.load()};
  }

  void set_sleep_for_testing(std::function<void(std::chrono::milliseconds)> sleep) {
    sleep_ = std::move(sleep);
  }

 private:
  std::string call_with_retries(const ModelRequest& request, const std::string& digest) {
    auto backoff = retry_.initial_backoff;
    for (int attempt = 0;; ++attempt) {
      try {
        ++backend_calls_;
        return backend_.generate(request, digest);
      } catch (const TransportError& e) {
        if (!e.retryable() || attempt >= retry_.max_retries) {
          throw TransportError(std::string(e.what()) + " (after " + std::to_string(attempt + 1) +
                                   " attempts)",
                               false);
        }
        ++retries_;
        sleep_(backoff);
        backoff = std::chrono::milliseconds(
            static_cast<long long>(static_cast<double>(backoff.count()) * retry_.backoff_factor));
      }
    }
  }

  Backend& backend_;
  RetryPolicy retry_;
  std::optional<ResponseCache> cache_;
  std::atomic<std::size_t> requests_{0}, cache_hits_{0}, backend_calls_{0}, retries_{0};
  std::function<void(std::chrono::milliseconds)> sleep_ = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
};

/// Endpoint settings from IIMMR_API_BASE / IIMMR_API_KEY / IIMMR_CACHE_DIR.
struct EndpointEnv {
  std::optional<std::string> api_base;
  std::optional<std::string> api_key;
  std::optional<std::string> cache_dir;

  static EndpointEnv from_environment() {
    auto get = [](const char* k) -> std::optional<std::string> {
      const char* v = std::getenv(k);
      if (v == nullptr || *v == '\0') return std::nullopt;
      return std::string(v);
    };
    return {get("IIMMR_API_BASE"), get("IIMMR_API_KEY"), get("IIMMR_CACHE_DIR")};
  }
};

/// Runs fn(i) for i in [0, n) on at most max_inflight threads. Results are
/// written by index by the caller, so completion order never matters. The
/// returned vector holds the exception (if any) of each index.
template <typename Fn>
std::vector<std::exception_ptr> parallel_for_index(std::size_t n, std::size_t max_inflight, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  if (n == 0) return errors;
  std::size_t workers = std::max<std::size_t>(1, std::min(max_inflight, n));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
    return errors;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  pool.clear();  // joins
  return errors;
}

}  // namespace iimmr
