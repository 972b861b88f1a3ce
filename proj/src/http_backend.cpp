#include <httplib.h>

#include <thread>

#include "harness/backends.hpp"

namespace harness {

using nlohmann::json;

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
  const auto& url = options_.base_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (options_.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
}

json HttpBackend::chat_body(const GenerationRequest& request) {
  json messages = json::array();
  if (!request.system.empty()) messages.push_back(json{{"role", "system"}, {"content", request.system}});
  messages.push_back(json{{"role", "user"}, {"content", request.user}});
  json body{{"model", request.model_id}, {"messages", messages}, {"temperature", request.temperature}};
  if (request.max_tokens) body["max_tokens"] = *request.max_tokens;
  return body;
}

json HttpBackend::completion_body(const LogprobQuery& query) {
  return json{{"model", query.model_id},
              {"prompt", query.prefix + query.continuation},
              {"max_tokens", 0},
              {"temperature", 0},
              {"echo", true},
              {"logprobs", 0}};
}

LogprobResult HttpBackend::parse_echo_logprobs(const json& response, const LogprobQuery& query) {
  const auto& lp = response.at("choices").at(0).at("logprobs");
  const auto& tokens = lp.at("tokens");
  const auto& logprobs = lp.at("token_logprobs");
  const auto& offsets = lp.at("text_offset");
  if (tokens.size() != logprobs.size() || tokens.size() != offsets.size()) {
    throw CorruptRecording("logprob arrays differ in length");
  }
  const std::size_t boundary = query.prefix.size();
  LogprobResult result;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto text = tokens[i].get<std::string>();
    const auto start = offsets[i].get<std::size_t>();
    const auto end = start + text.size();
    if (end <= boundary) continue;
    const auto cs = std::max(start, boundary) - boundary;
    const auto ce = end - boundary;
    // The first token of a prompt has no prediction; it contributes nothing.
    const double logprob = logprobs[i].is_null() ? 0.0 : logprobs[i].get<double>();
    result.tokens.push_back(TokenLogprob{query.continuation.substr(cs, ce - cs), logprob, cs, ce});
  }
  validate_logprobs(result, query.continuation);
  return result;
}

json HttpBackend::post(const std::string& path, const json& body) {
  httplib::Client client(scheme_host_port_);
  client.set_read_timeout(options_.timeout);
  client.set_write_timeout(options_.timeout);
  client.set_connection_timeout(std::chrono::seconds(10));
  const httplib::Headers headers{{"Authorization", "Bearer " + options_.api_key}};
  const auto payload = body.dump();

  int last_status = 0;
  std::string last_body;
  auto backoff = options_.initial_backoff;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    auto res = client.Post(path_prefix_ + path, headers, payload, "application/json");
    if (res && res->status == 200) {
      try {
        return json::parse(res->body);
      } catch (const json::parse_error& e) {
        throw TransportError(res->status, std::string("invalid JSON body: ") + e.what());
      }
    }
    if (res) {
      last_status = res->status;
      last_body = res->body;
      const bool retryable = res->status == 429 || res->status >= 500;
      if (!retryable) throw TransportError(last_status, last_body);
    } else {
      last_status = 0;
      last_body = httplib::to_string(res.error());
    }
    if (attempt < options_.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw TransportError(last_status, last_body);
}

std::string HttpBackend::chat_generate(const GenerationRequest& request) {
  validate(request);
  const auto response = post("/chat/completions", chat_body(request));
  try {
    const auto& content = response.at("choices").at(0).at("message").at("content");
    return content.is_null() ? std::string() : content.get<std::string>();
  } catch (const json::exception& e) {
    throw TransportError(200, std::string("unexpected response shape: ") + e.what());
  }
}

LogprobResult HttpBackend::completion_logprobs(const LogprobQuery& query) {
  if (!options_.supports_logprobs) throw Unsupported("configured endpoint does not return token logprobs");
  const auto response = post("/completions", completion_body(query));
  try {
    return parse_echo_logprobs(response, query);
  } catch (const json::exception& e) {
    throw Unsupported(std::string("endpoint did not return echoed logprobs: ") + e.what());
  }
}

}  // namespace harness
