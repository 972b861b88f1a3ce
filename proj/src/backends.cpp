#include "harness/backends.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

namespace harness {

using nlohmann::json;

namespace {

std::string canonical_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\r' && i + 1 < s.size() && s[i + 1] == '\n') continue;
    out += s[i];
  }
  return trim(out);
}

std::string fixed_temperature(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", t);
  return buf;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void validate(const GenerationRequest& request) {
  if (!(request.temperature >= 0.0 && request.temperature <= 2.0)) {
    throw PreconditionViolation("temperature must lie in [0, 2]");
  }
  if (request.model_id.empty()) throw PreconditionViolation("model_id must be non-empty");
  if (request.max_tokens && *request.max_tokens <= 0) throw PreconditionViolation("max_tokens must be positive");
}

void validate_logprobs(const LogprobResult& result, std::string_view continuation) {
  if (continuation.empty()) throw PreconditionViolation("logprob continuation must be non-empty");
  if (result.tokens.empty()) throw CorruptRecording("no tokens recorded for a non-empty continuation");
  std::size_t expected_start = 0;
  std::string joined;
  for (const auto& t : result.tokens) {
    if (t.char_start != expected_start || t.char_end < t.char_start) {
      throw CorruptRecording("token spans are not contiguous");
    }
    if (t.char_end - t.char_start != t.text.size()) throw CorruptRecording("token span length differs from text");
    if (!std::isfinite(t.logprob) || t.logprob > 0.0) throw CorruptRecording("log-probability must be finite and <= 0");
    joined += t.text;
    expected_start = t.char_end;
  }
  if (joined != continuation) throw CorruptRecording("token texts do not concatenate to the continuation");
}

json to_json(const GenerationRequest& r) {
  return json{{"kind", "chat"},
              {"system", canonical_text(r.system)},
              {"user", canonical_text(r.user)},
              {"temperature", fixed_temperature(r.temperature)},
              {"max_tokens", r.max_tokens ? json(*r.max_tokens) : json(nullptr)},
              {"model_id", canonical_text(r.model_id)},
              {"sample_tag", canonical_text(r.sample_tag)}};
}

json to_json(const LogprobQuery& q) {
  // The prefix/continuation boundary carries meaning, so only line endings
  // are folded here.
  auto fold = [](std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '\r' && i + 1 < s.size() && s[i + 1] == '\n') continue;
      out += s[i];
    }
    return out;
  };
  return json{{"kind", "logprobs"},
              {"prefix", fold(q.prefix)},
              {"continuation", fold(q.continuation)},
              {"model_id", canonical_text(q.model_id)}};
}

json to_json(const LogprobResult& r) {
  json arr = json::array();
  for (const auto& t : r.tokens) {
    arr.push_back(json{{"text", t.text}, {"logprob", t.logprob}, {"char_start", t.char_start}, {"char_end", t.char_end}});
  }
  return json{{"tokens", arr}};
}

LogprobResult logprob_result_from_json(const json& j) {
  LogprobResult r;
  for (const auto& t : j.at("tokens")) {
    r.tokens.push_back(TokenLogprob{t.at("text").get<std::string>(), t.at("logprob").get<double>(),
                                    t.at("char_start").get<std::size_t>(), t.at("char_end").get<std::size_t>()});
  }
  return r;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string cache_key(const GenerationRequest& request) { return sha256_hex(to_json(request).dump()); }

std::string cache_key(const LogprobQuery& query) { return sha256_hex(to_json(query).dump()); }

// ---------------------------------------------------------------------------
// CacheStore

CacheStore::CacheStore(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path CacheStore::path_for(const std::string& key) const {
  return root_ / key.substr(0, 2) / (key + ".json");
}

std::optional<json> CacheStore::get(const std::string& key) const {
  std::ifstream in(path_for(key), std::ios::binary);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw CorruptRecording("cache entry " + key + " is not valid JSON: " + e.what());
  }
}

void CacheStore::put(const std::string& key, const json& request, const json& reply) {
  const auto path = path_for(key);
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create cache directory " + path.parent_path().string() + ": " + ec.message());

  thread_local std::mt19937_64 rng{std::random_device{}()};
  const auto tmp = path.string() + ".tmp." + std::to_string(rng());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write cache entry " + tmp);
    out << json{{"request", request}, {"reply", reply}, {"timestamp", utc_timestamp()}}.dump(2) << '\n';
    if (!out) throw IoError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot publish cache entry " + path.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// ScriptedBackend

void ScriptedBackend::add_reply(const GenerationRequest& request, std::string reply) {
  std::lock_guard lock(mu_);
  replies_[cache_key(request)] = std::move(reply);
}

void ScriptedBackend::add_logprobs(const LogprobQuery& query, LogprobResult result) {
  std::lock_guard lock(mu_);
  logprobs_[cache_key(query)] = std::move(result);
}

std::string ScriptedBackend::chat_generate(const GenerationRequest& request) {
  validate(request);
  const auto key = cache_key(request);
  ChatHandler handler;
  {
    std::lock_guard lock(mu_);
    ++chat_calls_;
    if (auto it = replies_.find(key); it != replies_.end()) return it->second;
    handler = chat_handler_;
  }
  if (handler) {
    if (auto reply = handler(request)) return *reply;
  }
  throw ReplayMiss(key);
}

LogprobResult ScriptedBackend::completion_logprobs(const LogprobQuery& query) {
  const auto key = cache_key(query);
  std::optional<LogprobResult> result;
  LogprobHandler handler;
  {
    std::lock_guard lock(mu_);
    ++logprob_calls_;
    if (auto it = logprobs_.find(key); it != logprobs_.end()) result = it->second;
    handler = logprob_handler_;
  }
  if (!result && handler) result = handler(query);
  if (!result) throw ReplayMiss(key);
  validate_logprobs(*result, query.continuation);
  return *result;
}

std::size_t ScriptedBackend::chat_calls() const {
  std::lock_guard lock(mu_);
  return chat_calls_;
}

std::size_t ScriptedBackend::logprob_calls() const {
  std::lock_guard lock(mu_);
  return logprob_calls_;
}

// ---------------------------------------------------------------------------
// ReplayBackend

ReplayBackend::ReplayBackend(std::shared_ptr<CacheStore> store, bool strict, ChatBackend* chat_fallback,
                             LogprobBackend* logprob_fallback)
    : store_(std::move(store)), strict_(strict), chat_fallback_(chat_fallback), logprob_fallback_(logprob_fallback) {}

std::string ReplayBackend::chat_generate(const GenerationRequest& request) {
  const auto key = cache_key(request);
  if (auto entry = store_->get(key)) return entry->at("reply").get<std::string>();
  if (!strict_ && chat_fallback_) return chat_fallback_->chat_generate(request);
  throw ReplayMiss(key);
}

LogprobResult ReplayBackend::completion_logprobs(const LogprobQuery& query) {
  const auto key = cache_key(query);
  if (auto entry = store_->get(key)) {
    auto result = logprob_result_from_json(entry->at("reply"));
    validate_logprobs(result, query.continuation);
    return result;
  }
  if (!strict_ && logprob_fallback_) return logprob_fallback_->completion_logprobs(query);
  throw ReplayMiss(key);
}

// ---------------------------------------------------------------------------
// CachingBackend

CachingBackend::CachingBackend(std::shared_ptr<CacheStore> store, ChatBackend* chat, LogprobBackend* logprobs)
    : store_(std::move(store)), chat_(chat), logprobs_(logprobs) {}

std::string CachingBackend::chat_generate(const GenerationRequest& request) {
  const auto key = cache_key(request);
  if (auto entry = store_->get(key)) return entry->at("reply").get<std::string>();
  if (!chat_) throw Unsupported("no chat backend configured");
  auto reply = chat_->chat_generate(request);
  store_->put(key, to_json(request), reply);
  return reply;
}

LogprobResult CachingBackend::completion_logprobs(const LogprobQuery& query) {
  const auto key = cache_key(query);
  if (auto entry = store_->get(key)) {
    auto result = logprob_result_from_json(entry->at("reply"));
    validate_logprobs(result, query.continuation);
    return result;
  }
  if (!logprobs_) throw Unsupported("no logprob backend configured");
  auto result = logprobs_->completion_logprobs(query);
  store_->put(key, to_json(query), to_json(result));
  return result;
}

}  // namespace harness
