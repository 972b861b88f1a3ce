#pragma once

#include <atomic>
#include <optional>
#include <string>

#include "harness/backends.hpp"
#include "harness/colours.hpp"
#include "harness/translation.hpp"

namespace harness::testing {

// Reads the shipped prompt templates and answers from ground truth: lines
// are fitted from the prompt's own pairs, colour sentences are interpreted
// with the gold grammar and translation prompts are answered from the
// corpus, wordlist and gold features. Confidence prompts get "1.0".
class OracleBackend : public ChatBackend, public LogprobBackend {
 public:
  OracleBackend() = default;
  explicit OracleBackend(colours::ColourGrammar grammar) : grammar_(std::move(grammar)) {}
  explicit OracleBackend(translation::TranslationData data) : data_(std::move(data)) {}

  std::string chat_generate(const GenerationRequest& request) override;
  // Four-byte tokens with deterministic hash-derived log-probabilities.
  LogprobResult completion_logprobs(const LogprobQuery& query) override;

  std::size_t calls() const { return calls_; }

 private:
  std::string functions_reply(const std::string& prompt, bool final_marker) const;
  std::string colours_reply(const std::string& prompt, bool final_marker) const;
  std::string translation_reply(const std::string& prompt, bool final_marker) const;

  std::optional<colours::ColourGrammar> grammar_;
  std::optional<translation::TranslationData> data_;
  std::atomic<std::size_t> calls_{0};
};

// Tiles `text` into four-byte tokens with log-probabilities in [-1, -0.01].
LogprobResult hashed_logprobs(const std::string& text);

}  // namespace harness::testing
