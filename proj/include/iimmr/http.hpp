#pragma once

// HTTP transport: chat-style completion wire shape, the endpoint backend,
// the transcript-serving mock server, and the live snippet search client.

#include <chrono>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>

#include "iimmr/augment.hpp"
#include "iimmr/modelio.hpp"

namespace iimmr::http {

inline constexpr const char* kCompletionPath = "/v1/chat/completions";

/// {model, messages: [{role: user, content}], max_tokens, temperature, stop}.
/// With an image the content becomes [{type: text}, {type: image_url}].
inline json to_wire(const ModelRequest& r) {
  json content;
  if (r.image_ref) {
    content = json::array({json{{"type", "text"}, {"text", r.prompt}},
                           json{{"type", "image_url"}, {"image_url", {{"url", *r.image_ref}}}}});
  } else {
    content = r.prompt;
  }
  json body;
  body["model"] = r.model_name;
  body["messages"] = json::array({json{{"role", "user"}, {"content", content}}});
  body["max_tokens"] = r.max_tokens;
  body["temperature"] = r.temperature;
  body["stop"] = r.stop_sequences;
  return body;
}

inline ModelRequest from_wire(const json& body) {
  ModelRequest r;
  if (!body.is_object() || !body.contains("messages") || !body["messages"].is_array() ||
      body["messages"].empty())
    throw ParseError("completion request: missing messages");
  r.model_name = body.value("model", std::string{});
  r.max_tokens = body.value("max_tokens", 256);
  r.temperature = body.value("temperature", 0.0);
  if (body.contains("stop") && body["stop"].is_array())
    r.stop_sequences = body["stop"].get<std::vector<std::string>>();
  const auto& content = body["messages"].back().at("content");
  if (content.is_string()) {
    r.prompt = content.get<std::string>();
  } else if (content.is_array()) {
    for (const auto& part : content) {
      auto type = part.value("type", std::string{});
      if (type == "text") r.prompt += part.value("text", std::string{});
      if (type == "image_url") r.image_ref = part.at("image_url").value("url", std::string{});
    }
  } else {
    throw ParseError("completion request: content must be a string or a list of parts");
  }
  return r;
}

namespace detail {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

inline Url split_url(const std::string& base) {
  auto scheme = base.find("://");
  if (scheme == std::string::npos) throw PreconditionError("endpoint URL needs a scheme: " + base);
  auto slash = base.find('/', scheme + 3);
  Url u;
  u.origin = base.substr(0, slash);
  u.prefix = slash == std::string::npos ? "" : base.substr(slash);
  while (!u.prefix.empty() && u.prefix.back() == '/') u.prefix.pop_back();
  return u;
}

}  // namespace detail

/// Talks to an OpenAI-compatible chat completion endpoint. Connection
/// failures and 429/5xx are retryable TransportErrors; other statuses are not.
class HttpBackend final : public Backend {
 public:
  HttpBackend(std::string base_url, std::optional<std::string> api_key,
              std::chrono::seconds timeout = std::chrono::seconds(120))
      : url_(detail::split_url(base_url)), api_key_(std::move(api_key)), timeout_(timeout) {}

  std::string generate(const ModelRequest& request, const std::string& digest) override {
    httplib::Client cli(url_.origin);
    cli.set_connection_timeout(10);
    cli.set_read_timeout(static_cast<time_t>(timeout_.count()));
    httplib::Headers headers;
    if (api_key_) headers.emplace("Authorization", "Bearer " + *api_key_);
    auto res = cli.Post(url_.prefix + kCompletionPath, headers, to_wire(request).dump(),
                        "application/json");
    if (!res) throw TransportError("endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status == 422) {
      auto err = json::parse(res->body, nullptr, false);
      if (err.is_object() && err.contains("error") &&
          err["error"].value("type", std::string{}) == "unscripted_request")
        throw UnscriptedRequest(err["error"].value("digest", digest));
    }
    if (res->status == 429 || res->status >= 500)
      throw TransportError("endpoint returned HTTP " + std::to_string(res->status));
    if (res->status != 200)
      throw TransportError("endpoint returned HTTP " + std::to_string(res->status) + ": " +
                               res->body.substr(0, 200),
                           false);
    auto body = json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.contains("choices") || !body["choices"].is_array() ||
        body["choices"].empty())
      throw TransportError("endpoint returned a malformed completion body", false);
    const auto& msg = body["choices"][0].at("message");
    return msg.value("content", std::string{});
  }

  std::string name() const override { return "http:" + url_.origin + url_.prefix; }

 private:
  detail::Url url_;
  std::optional<std::string> api_key_;
  std::chrono::seconds timeout_;
};

/// Serves a MockBackend over the completion wire shape. Unscripted requests
/// answer 422 with {"error": {"type": "unscripted_request", "digest": ...}}.
class MockServer {
 public:
  explicit MockServer(MockBackend& backend) : backend_(backend) {
    server_.Post(kCompletionPath, [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res);
    });
  }

  ~MockServer() { stop(); }

  // Binds (port 0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error("mock-serve: cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Serves on the calling thread until stopped.
  void run(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw Error("mock-serve: cannot listen on " + host);
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    try {
      auto request = from_wire(json::parse(req.body));
      auto digest = cache_key(request);
      std::string text;
      {
        std::lock_guard lock(mu_);
        text = backend_.generate(request, digest);
      }
      json body;
      body["choices"] = json::array(
          {json{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}}});
      res.set_content(body.dump(), "application/json");
    } catch (const UnscriptedRequest& e) {
      res.status = 422;
      res.set_content(
          json{{"error", {{"type", "unscripted_request"}, {"digest", e.digest()}, {"message", e.what()}}}}
              .dump(),
          "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", {{"type", "bad_request"}, {"message", e.what()}}}}.dump(),
                      "application/json");
    }
  }

  MockBackend& backend_;
  httplib::Server server_;
  std::mutex mu_;
  std::thread thread_;
  int port_ = -1;
};

/// Live search endpoint: GET <base>?q=<keyword>&limit=<n> answering a list of
/// {title, snippet}. Requests are spaced by at least min_interval.
class HttpSnippetSource final : public SnippetSource {
 public:
  HttpSnippetSource(std::string base_url,
                    std::chrono::milliseconds min_interval = std::chrono::milliseconds(0))
      : url_(detail::split_url(base_url)), min_interval_(min_interval) {}

  std::vector<Caption> search(const std::string& keyword, std::size_t limit) override {
    {
      std::lock_guard lock(mu_);
      auto now = std::chrono::steady_clock::now();
      if (last_ && now - *last_ < min_interval_) std::this_thread::sleep_for(min_interval_ - (now - *last_));
      last_ = std::chrono::steady_clock::now();
    }
    httplib::Client cli(url_.origin);
    cli.set_connection_timeout(10);
    httplib::Params params{{"q", keyword}, {"limit", std::to_string(limit)}};
    auto res = cli.Get(url_.prefix.empty() ? "/" : url_.prefix, params, httplib::Headers{});
    if (!res) throw TransportError("search endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw TransportError("search endpoint returned HTTP " + std::to_string(res->status),
                           res->status >= 500);
    auto body = json::parse(res->body, nullptr, false);
    if (!body.is_array()) throw TransportError("search endpoint returned a non-list body", false);
    std::vector<Caption> out;
    for (const auto& hit : body) {
      auto snippet = hit.value("snippet", std::string{});
      if (text::trim(snippet).empty()) continue;
      out.push_back({snippet, hit.value("title", std::string{})});
      if (out.size() >= limit) break;
    }
    return out;
  }

 private:
  detail::Url url_;
  std::chrono::milliseconds min_interval_;
  std::mutex mu_;
  std::optional<std::chrono::steady_clock::time_point> last_;
};

}  // namespace iimmr::http
