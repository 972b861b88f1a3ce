#include <gtest/gtest.h>

#include "harness/rerank.hpp"

using namespace harness;

namespace {

RerankContext context() {
  const auto tmpl = PromptTemplate::from_body("ex", "Input: {input}\nOutput: {output}");
  return make_rerank_context(tmpl, {{"1", "3"}, {"2", "5"}});
}

Hypothesis parsed(std::string raw) { return {raw, std::nullopt, raw}; }

ScoredHypothesis scored(std::string raw, double score) {
  return ScoredHypothesis{parsed(std::move(raw)), RerankMethod::p_data, score};
}

// One logprob per character, -0.5 inside the answers and -0.1 elsewhere.
LogprobResult per_char(const RerankContext& ctx) {
  LogprobResult r;
  for (std::size_t i = 0; i < ctx.rendered_examples.size(); ++i) {
    bool in_answer = false;
    for (const auto& [b, e] : ctx.answer_spans) in_answer = in_answer || (b <= i && i < e);
    r.tokens.push_back({ctx.rendered_examples.substr(i, 1), in_answer ? -0.5 : -0.1, i, i + 1});
  }
  return r;
}

}  // namespace

TEST(Confidence, ParsesFirstNumber) {
  EXPECT_EQ(parse_confidence("0.8"), 0.8);
  EXPECT_EQ(parse_confidence("Probability: .75 (fairly sure)"), 0.75);
  EXPECT_EQ(parse_confidence("1e-2"), 0.01);
  EXPECT_EQ(parse_confidence("-3 then 4"), -3.0);
  EXPECT_FALSE(parse_confidence("quite likely"));
}

TEST(Verbal, ClampsAndRejects) {
  ScriptedBackend backend;
  std::string reply;
  backend.set_chat_handler([&](const GenerationRequest& r) -> std::optional<std::string> {
    EXPECT_NE(r.user.find("y = 2x + 1"), std::string::npos);
    EXPECT_NE(r.user.find("Output: 5"), std::string::npos);
    EXPECT_EQ(r.temperature, 0.0);
    return reply;
  });
  VerbalScorer scorer{&backend, "m", "", PromptTemplate::from_body("c", "{examples}\n{hypothesis}\nProbability:"),
                      0.0};
  const auto ctx = context();
  reply = "0.6";
  EXPECT_EQ(score_verbal(parsed("y = 2x + 1"), ctx, scorer), 0.6);
  reply = "140";
  EXPECT_EQ(score_verbal(parsed("y = 2x + 1"), ctx, scorer), 1.0);
  reply = "-2";
  EXPECT_EQ(score_verbal(parsed("y = 2x + 1"), ctx, scorer), 0.0);
  reply = "no idea";
  EXPECT_TRUE(is_minus_infinity(score_verbal(parsed("y = 2x + 1"), ctx, scorer)));
}

TEST(Logprob, DataSumsAllAnswerSumsSpans) {
  const auto ctx = context();
  ScriptedBackend backend;
  backend.set_logprob_handler([&](const LogprobQuery& q) -> std::optional<LogprobResult> {
    EXPECT_EQ(q.prefix, "Rule: y = 2x + 1\n");
    EXPECT_EQ(q.continuation, ctx.rendered_examples);
    return per_char(ctx);
  });
  const LogprobScorer scorer{&backend, "m", PromptTemplate::from_body("p", "Rule: {hypothesis}\n")};
  const auto h = parsed("y = 2x + 1");
  const double n = static_cast<double>(ctx.rendered_examples.size());
  EXPECT_NEAR(score_p_data(h, ctx, scorer), -0.5 * 2 - 0.1 * (n - 2), 1e-12);
  EXPECT_NEAR(score_p_answer(h, ctx, scorer), -1.0, 1e-12);
}

TEST(Logprob, AnswerSpanOverlapRules) {
  LogprobResult r;
  r.tokens = {{"ab", -1.0, 0, 2}, {"cd", -2.0, 2, 4}, {"ef", -4.0, 4, 6}};
  // A token touching a span boundary does not count; a partial overlap does.
  EXPECT_EQ(sum_answer_logprobs(r, {{3, 4}}), -2.0);
  EXPECT_EQ(sum_answer_logprobs(r, {{1, 5}}), -7.0);
  EXPECT_THROW(sum_answer_logprobs(r, {{6, 8}}), NoAnswerTokens);
  EXPECT_THROW(sum_answer_logprobs(r, {}), NoAnswerTokens);
}

TEST(Logprob, MissingBackendIsUnsupported) {
  const LogprobScorer scorer{nullptr, "m", PromptTemplate::from_body("p", "{hypothesis}")};
  EXPECT_THROW(score_p_data(parsed("x"), context(), scorer), Unsupported);
}

TEST(Select, ArgmaxTiesAndFallback) {
  EXPECT_EQ(select_best({scored("a", -3), scored("b", -1), scored("c", -1)}).index, 1u);
  const auto none = select_best({scored("a", kMinusInfinity), scored("b", kMinusInfinity)});
  EXPECT_FALSE(none.index);
  EXPECT_TRUE(none.fallback);
  EXPECT_EQ(select_best({scored("a", kMinusInfinity), scored("b", -100)}).index, 1u);
  EXPECT_THROW(select_best({}), EmptyCandidates);
}

TEST(ScoreHypothesis, UnparsedSkipsBackend) {
  ScriptedBackend backend;
  backend.set_chat_handler([](const GenerationRequest&) { return std::optional<std::string>("0.9"); });
  Scorers scorers;
  scorers.verbal = {&backend, "m", "", PromptTemplate::from_body("c", "{hypothesis}"), 0.0};
  scorers.external = [](const Hypothesis& h) { return h.raw == "good" ? 0.0 : -1.0; };
  const auto ctx = context();

  const auto unparsed = score_hypothesis(RerankMethod::verbal_conf, {"junk", std::nullopt, std::nullopt}, ctx, scorers);
  EXPECT_TRUE(is_minus_infinity(unparsed.score));
  EXPECT_EQ(backend.chat_calls(), 0u);
  EXPECT_EQ(score_hypothesis(RerankMethod::verbal_conf, parsed("h"), ctx, scorers).score, 0.9);
  EXPECT_EQ(backend.chat_calls(), 1u);
  EXPECT_EQ(score_hypothesis(RerankMethod::external_validator, parsed("good"), ctx, scorers).score, 0.0);
  EXPECT_EQ(score_hypothesis(RerankMethod::external_validator, parsed("bad"), ctx, scorers).method,
            RerankMethod::external_validator);
  scorers.external = nullptr;
  EXPECT_THROW(score_hypothesis(RerankMethod::external_validator, parsed("good"), ctx, scorers),
               PreconditionViolation);
}
