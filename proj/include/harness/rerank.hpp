#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "harness/backends.hpp"
#include "harness/core.hpp"
#include "harness/prompt_template.hpp"

namespace harness {

class NoAnswerTokens : public Error {
 public:
  NoAnswerTokens() : Error("no scored token overlaps an answer span") {}
};

class EmptyCandidates : public Error {
 public:
  EmptyCandidates() : Error("select_best needs at least one candidate") {}
};

// What a scorer sees: the in-context block as rendered for it and where each
// example's target sits in that block.
struct RerankContext {
  std::string rendered_examples;
  std::vector<std::pair<std::size_t, std::size_t>> answer_spans;
  // The word under study for per-word hypotheses.
  std::optional<std::string> word;
};

// Builds a context from examples rendered with `example_tmpl`.
RerankContext make_rerank_context(const PromptTemplate& example_tmpl, const std::vector<Example>& examples,
                                  std::optional<std::string> word = std::nullopt);

// First real number in a reply ("0.8", "Probability: .75", "1e-2").
std::optional<double> parse_confidence(std::string_view reply);

struct VerbalScorer {
  ChatBackend* backend = nullptr;
  std::string model_id;
  std::string system;
  // Slots {hypothesis}, {examples} and optionally {word}.
  PromptTemplate prompt;
  double temperature = 0.0;
};

// Confidence clamped to [0, 1]; minus infinity when the reply has no number.
double score_verbal(const Hypothesis& h, const RerankContext& ctx, const VerbalScorer& scorer);

struct LogprobScorer {
  LogprobBackend* backend = nullptr;
  std::string model_id;
  // Slots {hypothesis} and optionally {word}; the rendered examples follow it.
  PromptTemplate prefix;
};

LogprobQuery logprob_query(const Hypothesis& h, const RerankContext& ctx, const LogprobScorer& scorer);

// Sum of log-probabilities over every token of the in-context block.
double score_p_data(const Hypothesis& h, const RerankContext& ctx, const LogprobScorer& scorer);

// Same query as score_p_data, summing only tokens whose span intersects an
// answer span. Throws NoAnswerTokens when none does.
double score_p_answer(const Hypothesis& h, const RerankContext& ctx, const LogprobScorer& scorer);

double sum_answer_logprobs(const LogprobResult& result, const std::vector<std::pair<std::size_t, std::size_t>>& spans);

struct Selection {
  std::optional<std::size_t> index;
  bool fallback = false;
};

// Argmax with ties to the lowest index. Every score at minus infinity
// yields no winner and fallback = true.
Selection select_best(const std::vector<ScoredHypothesis>& candidates);

using ExternalValidator = std::function<double(const Hypothesis&)>;

struct Scorers {
  VerbalScorer verbal;
  LogprobScorer logprob;
  ExternalValidator external;
};

// Scores with `method`. A hypothesis the domain could not parse
// (`parsed` unset) scores minus infinity without any backend call.
ScoredHypothesis score_hypothesis(RerankMethod method, const Hypothesis& h, const RerankContext& ctx,
                                  const Scorers& scorers);

}  // namespace harness
