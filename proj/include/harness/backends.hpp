#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/core.hpp"

namespace harness {

class TransportError : public Error {
 public:
  TransportError(int status, std::string body)
      : Error("transport error (status " + std::to_string(status) + "): " + body),
        status_(status),
        body_(std::move(body)) {}
  int status() const { return status_; }
  const std::string& body() const { return body_; }

 private:
  int status_;
  std::string body_;
};

class ReplayMiss : public Error {
 public:
  explicit ReplayMiss(std::string key) : Error("no recording for request " + key), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class Unsupported : public Error {
 public:
  using Error::Error;
};

class CorruptRecording : public Error {
 public:
  using Error::Error;
};

struct GenerationRequest {
  std::string system;
  std::string user;
  double temperature = 0.0;
  std::optional<int> max_tokens;
  std::string model_id;
  // Distinguishes repeated samples of one prompt (trial, hypothesis index).
  // Part of the cache key; never sent over the wire.
  std::string sample_tag;
};

// Throws PreconditionViolation on an out-of-range temperature, empty
// model id or non-positive max_tokens.
void validate(const GenerationRequest& request);

struct LogprobQuery {
  std::string prefix;
  std::string continuation;
  std::string model_id;
};

struct TokenLogprob {
  std::string text;
  double logprob = 0.0;
  std::size_t char_start = 0;
  std::size_t char_end = 0;

  bool operator==(const TokenLogprob&) const = default;
};

struct LogprobResult {
  std::vector<TokenLogprob> tokens;

  bool operator==(const LogprobResult&) const = default;
};

// Throws CorruptRecording unless the tokens tile `continuation` exactly with
// non-positive, finite log-probabilities.
void validate_logprobs(const LogprobResult& result, std::string_view continuation);

nlohmann::json to_json(const GenerationRequest& r);
nlohmann::json to_json(const LogprobQuery& q);
nlohmann::json to_json(const LogprobResult& r);
LogprobResult logprob_result_from_json(const nlohmann::json& j);

// 64 hex characters of SHA-256 over a canonical serialization: sorted keys,
// CRLF folded to LF, surrounding whitespace of text fields trimmed and the
// temperature printed with fixed precision.
std::string cache_key(const GenerationRequest& request);
std::string cache_key(const LogprobQuery& query);

std::string sha256_hex(std::string_view data);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string chat_generate(const GenerationRequest& request) = 0;
};

class LogprobBackend {
 public:
  virtual ~LogprobBackend() = default;
  virtual LogprobResult completion_logprobs(const LogprobQuery& query) = 0;
};

// Content-addressed response store: `<root>/<key[0:2]>/<key>.json`
// holding {request, reply, timestamp}. Writes go through a temporary file
// and a rename so readers never observe a partial entry.
class CacheStore {
 public:
  explicit CacheStore(std::filesystem::path root);

  std::optional<nlohmann::json> get(const std::string& key) const;
  void put(const std::string& key, const nlohmann::json& request, const nlohmann::json& reply);
  std::filesystem::path path_for(const std::string& key) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

// Serves replies from a table keyed by cache_key, or from a handler for
// requests the table does not cover. Strict mode with neither raises
// ReplayMiss.
class ScriptedBackend : public ChatBackend, public LogprobBackend {
 public:
  using ChatHandler = std::function<std::optional<std::string>(const GenerationRequest&)>;
  using LogprobHandler = std::function<std::optional<LogprobResult>(const LogprobQuery&)>;

  ScriptedBackend() = default;

  void add_reply(const GenerationRequest& request, std::string reply);
  void add_logprobs(const LogprobQuery& query, LogprobResult result);
  void set_chat_handler(ChatHandler handler) { chat_handler_ = std::move(handler); }
  void set_logprob_handler(LogprobHandler handler) { logprob_handler_ = std::move(handler); }

  std::string chat_generate(const GenerationRequest& request) override;
  LogprobResult completion_logprobs(const LogprobQuery& query) override;

  std::size_t chat_calls() const;
  std::size_t logprob_calls() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::string> replies_;
  std::map<std::string, LogprobResult> logprobs_;
  ChatHandler chat_handler_;
  LogprobHandler logprob_handler_;
  std::size_t chat_calls_ = 0;
  std::size_t logprob_calls_ = 0;
};

// Replays a CacheStore. A miss raises ReplayMiss in strict mode; otherwise
// it is forwarded to `fallback` when one is given.
class ReplayBackend : public ChatBackend, public LogprobBackend {
 public:
  ReplayBackend(std::shared_ptr<CacheStore> store, bool strict = true, ChatBackend* chat_fallback = nullptr,
                LogprobBackend* logprob_fallback = nullptr);

  std::string chat_generate(const GenerationRequest& request) override;
  LogprobResult completion_logprobs(const LogprobQuery& query) override;

 private:
  std::shared_ptr<CacheStore> store_;
  bool strict_;
  ChatBackend* chat_fallback_;
  LogprobBackend* logprob_fallback_;
};

// Read-through cache in front of another backend; every reply produced by
// the inner backend is stored before it is returned.
class CachingBackend : public ChatBackend, public LogprobBackend {
 public:
  CachingBackend(std::shared_ptr<CacheStore> store, ChatBackend* chat, LogprobBackend* logprobs);

  std::string chat_generate(const GenerationRequest& request) override;
  LogprobResult completion_logprobs(const LogprobQuery& query) override;

 private:
  std::shared_ptr<CacheStore> store_;
  ChatBackend* chat_;
  LogprobBackend* logprobs_;
};

struct HttpBackendOptions {
  std::string base_url;  // e.g. https://api.openai.com/v1
  std::string api_key;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::chrono::seconds timeout{120};
  bool supports_logprobs = true;
};

// OpenAI-compatible HTTP backend: POST <base>/chat/completions for
// generation and POST <base>/completions with echo for scoring. 429 and 5xx
// are retried with exponential backoff; other failures are immediate.
class HttpBackend : public ChatBackend, public LogprobBackend {
 public:
  explicit HttpBackend(HttpBackendOptions options);

  std::string chat_generate(const GenerationRequest& request) override;
  LogprobResult completion_logprobs(const LogprobQuery& query) override;

  // Request bodies as sent, exposed for tests.
  static nlohmann::json chat_body(const GenerationRequest& request);
  static nlohmann::json completion_body(const LogprobQuery& query);
  // Extracts the continuation's tokens from an echoed completion response.
  static LogprobResult parse_echo_logprobs(const nlohmann::json& response, const LogprobQuery& query);

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body);

  HttpBackendOptions options_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

}  // namespace harness
