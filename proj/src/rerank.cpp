#include "harness/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

namespace harness {

RerankContext make_rerank_context(const PromptTemplate& example_tmpl, const std::vector<Example>& examples,
                                  std::optional<std::string> word) {
  auto block = render_examples(example_tmpl, examples, "\n\n");
  return RerankContext{std::move(block.text), std::move(block.answer_spans), std::move(word)};
}

std::optional<double> parse_confidence(std::string_view reply) {
  static const std::regex number(R"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(reply.begin(), reply.end(), m, number)) return std::nullopt;
  const double value = std::strtod(m.str().c_str(), nullptr);
  if (!std::isfinite(value)) return std::nullopt;
  return value;
}

namespace {

Bindings scorer_bindings(const Hypothesis& h, const RerankContext& ctx) {
  Bindings b{{"hypothesis", trim(h.raw)}, {"examples", ctx.rendered_examples}};
  if (ctx.word) b["word"] = *ctx.word;
  return b;
}

}  // namespace

double score_verbal(const Hypothesis& h, const RerankContext& ctx, const VerbalScorer& scorer) {
  if (!scorer.backend) throw PreconditionViolation("verbal scorer has no backend");
  GenerationRequest request;
  request.system = scorer.system;
  request.user = render_template(scorer.prompt, scorer_bindings(h, ctx));
  request.temperature = scorer.temperature;
  request.model_id = scorer.model_id;
  const auto value = parse_confidence(scorer.backend->chat_generate(request));
  if (!value) return kMinusInfinity;
  return std::clamp(*value, 0.0, 1.0);
}

LogprobQuery logprob_query(const Hypothesis& h, const RerankContext& ctx, const LogprobScorer& scorer) {
  auto bindings = scorer_bindings(h, ctx);
  bindings.erase("examples");
  return LogprobQuery{render_template(scorer.prefix, bindings), ctx.rendered_examples, scorer.model_id};
}

double score_p_data(const Hypothesis& h, const RerankContext& ctx, const LogprobScorer& scorer) {
  if (!scorer.backend) throw Unsupported("no logprob backend configured");
  const auto result = scorer.backend->completion_logprobs(logprob_query(h, ctx, scorer));
  validate_logprobs(result, ctx.rendered_examples);
  double total = 0.0;
  for (const auto& t : result.tokens) total += t.logprob;
  return total;
}

double sum_answer_logprobs(const LogprobResult& result, const std::vector<std::pair<std::size_t, std::size_t>>& spans) {
  double total = 0.0;
  bool any = false;
  for (const auto& t : result.tokens) {
    const bool hit = std::any_of(spans.begin(), spans.end(), [&](const auto& span) {
      return t.char_start < span.second && span.first < t.char_end;
    });
    if (hit) {
      total += t.logprob;
      any = true;
    }
  }
  if (!any) throw NoAnswerTokens();
  return total;
}

double score_p_answer(const Hypothesis& h, const RerankContext& ctx, const LogprobScorer& scorer) {
  if (!scorer.backend) throw Unsupported("no logprob backend configured");
  const auto result = scorer.backend->completion_logprobs(logprob_query(h, ctx, scorer));
  validate_logprobs(result, ctx.rendered_examples);
  return sum_answer_logprobs(result, ctx.answer_spans);
}

Selection select_best(const std::vector<ScoredHypothesis>& candidates) {
  if (candidates.empty()) throw EmptyCandidates();
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double s = candidates[i].score;
    if (is_minus_infinity(s) || std::isnan(s)) continue;
    if (!best || s > candidates[*best].score) best = i;
  }
  return Selection{best, !best.has_value()};
}

ScoredHypothesis score_hypothesis(RerankMethod method, const Hypothesis& h, const RerankContext& ctx,
                                  const Scorers& scorers) {
  ScoredHypothesis out{h, method, kMinusInfinity};
  if (!h.parsed) return out;
  switch (method) {
    case RerankMethod::verbal_conf:
      out.score = score_verbal(h, ctx, scorers.verbal);
      break;
    case RerankMethod::p_data:
      out.score = score_p_data(h, ctx, scorers.logprob);
      break;
    case RerankMethod::p_answer:
      out.score = score_p_answer(h, ctx, scorers.logprob);
      break;
    case RerankMethod::external_validator:
      if (!scorers.external) throw PreconditionViolation("no external validator for this domain");
      out.score = scorers.external(h);
      break;
  }
  return out;
}

}  // namespace harness
