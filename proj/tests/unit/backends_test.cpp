#include <atomic>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "harness/backends.hpp"
#include "scratch.hpp"

using namespace harness;
using nlohmann::json;

namespace {

GenerationRequest request(std::string user, std::string tag = "") {
  GenerationRequest r;
  r.system = "sys";
  r.user = std::move(user);
  r.temperature = 0.7;
  r.model_id = "m";
  r.sample_tag = std::move(tag);
  return r;
}

LogprobResult tokens(std::vector<std::pair<std::string, double>> parts) {
  LogprobResult r;
  std::size_t at = 0;
  for (auto& [text, lp] : parts) {
    r.tokens.push_back({text, lp, at, at + text.size()});
    at += text.size();
  }
  return r;
}

}  // namespace

TEST(CacheKey, CanonicalAndSensitive) {
  const auto base = request("hello");
  EXPECT_EQ(cache_key(base).size(), 64u);
  auto crlf = request("hello\r\n");
  EXPECT_EQ(cache_key(base), cache_key(crlf));
  auto other_tag = request("hello", "hyp:t0:i1");
  EXPECT_NE(cache_key(base), cache_key(other_tag));
  auto warmer = base;
  warmer.temperature = 0.8;
  EXPECT_NE(cache_key(base), cache_key(warmer));
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Validate, RequestAndLogprobs) {
  auto r = request("x");
  r.temperature = 2.5;
  EXPECT_THROW(validate(r), PreconditionViolation);
  r = request("x");
  r.model_id.clear();
  EXPECT_THROW(validate(r), PreconditionViolation);

  EXPECT_NO_THROW(validate_logprobs(tokens({{"ab", -0.1}, {"c", 0.0}}), "abc"));
  EXPECT_THROW(validate_logprobs(tokens({{"ab", -0.1}}), "abc"), CorruptRecording);
  EXPECT_THROW(validate_logprobs(tokens({{"ab", 0.5}, {"c", -1}}), "abc"), CorruptRecording);
}

TEST(ScriptedBackend, TableThenHandlerThenMiss) {
  ScriptedBackend b;
  b.add_reply(request("a"), "reply a");
  EXPECT_EQ(b.chat_generate(request("a")), "reply a");
  EXPECT_THROW(b.chat_generate(request("b")), ReplayMiss);
  b.set_chat_handler([](const GenerationRequest& r) -> std::optional<std::string> {
    if (r.user == "b") return "handled";
    return std::nullopt;
  });
  EXPECT_EQ(b.chat_generate(request("b")), "handled");
  EXPECT_THROW(b.chat_generate(request("c")), ReplayMiss);
  EXPECT_EQ(b.chat_calls(), 4u);
}

TEST(CachingAndReplay, RecordsThenReplaysWithoutInner) {
  harness::testing::ScratchDir dir("cache");
  auto store = std::make_shared<CacheStore>(dir.path());
  ScriptedBackend inner;
  inner.set_chat_handler([](const GenerationRequest& r) { return std::optional<std::string>("echo " + r.user); });
  inner.set_logprob_handler([](const LogprobQuery& q) {
    return std::optional<LogprobResult>(tokens({{q.continuation, -2.0}}));
  });
  CachingBackend caching(store, &inner, &inner);
  const LogprobQuery q{"prefix ", "cont", "m"};
  EXPECT_EQ(caching.chat_generate(request("one")), "echo one");
  EXPECT_EQ(caching.chat_generate(request("one")), "echo one");
  EXPECT_EQ(caching.completion_logprobs(q).tokens.front().logprob, -2.0);
  EXPECT_EQ(inner.chat_calls(), 1u);
  EXPECT_TRUE(std::filesystem::exists(store->path_for(cache_key(request("one")))));

  ReplayBackend replay(store, true);
  EXPECT_EQ(replay.chat_generate(request("one")), "echo one");
  EXPECT_EQ(replay.completion_logprobs(q), caching.completion_logprobs(q));
  EXPECT_THROW(replay.chat_generate(request("two")), ReplayMiss);

  ReplayBackend lenient(store, false, &inner, &inner);
  EXPECT_EQ(lenient.chat_generate(request("two")), "echo two");
}

TEST(CacheStore, CorruptEntryIsReported) {
  harness::testing::ScratchDir dir("corrupt");
  CacheStore store(dir.path());
  const auto key = cache_key(request("x"));
  std::filesystem::create_directories(store.path_for(key).parent_path());
  std::ofstream(store.path_for(key)) << "{ not json";
  EXPECT_THROW(store.get(key), CorruptRecording);
  EXPECT_FALSE(store.get(cache_key(request("y"))).has_value());
}

TEST(HttpBackend, RequestBodies) {
  auto r = request("hi");
  r.max_tokens = 64;
  const auto body = HttpBackend::chat_body(r);
  EXPECT_EQ(body["model"], "m");
  EXPECT_EQ(body["messages"].size(), 2u);
  EXPECT_EQ(body["messages"][1]["content"], "hi");
  EXPECT_EQ(body["max_tokens"], 64);
  EXPECT_FALSE(body.contains("sample_tag"));

  const auto comp = HttpBackend::completion_body({"Rule: x\n", "a b", "m"});
  EXPECT_EQ(comp["prompt"], "Rule: x\na b");
  EXPECT_EQ(comp["echo"], true);
  EXPECT_EQ(comp["max_tokens"], 0);
}

TEST(HttpBackend, EchoLogprobsKeepContinuationTokens) {
  const LogprobQuery q{"ab", "cd e", "m"};
  const json response = {{"choices",
                          {{{"logprobs",
                             {{"tokens", {"a", "bc", "d", " e"}},
                              {"token_logprobs", {nullptr, -0.5, -0.25, -1.0}},
                              {"text_offset", {0, 1, 3, 4}}}}}}}};
  const auto result = HttpBackend::parse_echo_logprobs(response, q);
  ASSERT_EQ(result.tokens.size(), 3u);
  EXPECT_EQ(result.tokens[0].text, "c");
  EXPECT_EQ(result.tokens[0].char_start, 0u);
  EXPECT_EQ(result.tokens[2].text, " e");
  EXPECT_DOUBLE_EQ(result.tokens[1].logprob, -0.25);
}

TEST(HttpBackend, RetriesServerErrorsAndFailsFastOnClientErrors) {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    if (body["messages"].back()["content"] == "bad") {
      res.status = 400;
      res.set_content("{\"error\": \"bad request\"}", "application/json");
      return;
    }
    if (hits++ < 2) {
      res.status = 503;
      return;
    }
    res.set_content(json{{"choices", {{{"message", {{"content", "fine"}}}}}}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread loop([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpBackendOptions options;
  options.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  options.api_key = "k";
  options.initial_backoff = std::chrono::milliseconds(1);
  HttpBackend backend(options);
  EXPECT_EQ(backend.chat_generate(request("hello")), "fine");
  EXPECT_EQ(hits.load(), 3);
  try {
    backend.chat_generate(request("bad"));
    ADD_FAILURE() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_EQ(e.status(), 400);
  }
  server.stop();
  loop.join();
}
