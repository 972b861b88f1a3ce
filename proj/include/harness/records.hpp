#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/core.hpp"

namespace harness {

inline constexpr int kRecordSchema = 1;

// Outcome of inducing one word's meaning inside a per-word domain.
struct WordHypothesis {
  std::string word;
  std::optional<ScoredHypothesis> chosen;
  std::vector<ScoredHypothesis> candidates;
  // Null when the word was skipped by the evaluator.
  std::optional<bool> correct;
  // Correctness with morphologically marked dictionary entries excluded
  // (translation only).
  std::optional<bool> correct_excluding_morphology;
  bool cached = false;

  bool operator==(const WordHypothesis&) const = default;
};

struct ResultRecord {
  std::string model_id;
  Domain domain = Domain::functions;
  std::string instance_id;
  Setting setting = Setting::make(SettingKind::few_shot);
  int trial_index = 0;
  double temperature = 0.0;
  std::string query;
  std::string reference;
  std::string raw_output;
  bool marked = false;
  std::optional<std::string> parsed_output;
  std::optional<bool> correct;
  std::optional<double> segment_chrf;
  std::optional<double> squared_error;
  std::optional<ScoredHypothesis> chosen_hypothesis;
  std::vector<ScoredHypothesis> candidates;
  std::vector<WordHypothesis> word_hypotheses;
  bool fallback_used = false;
  // Canonical rendering of the ground-truth rule, when one exists.
  std::optional<std::string> truth_rule;
  // Whether the selected hypothesis matches the ground truth.
  std::optional<bool> hypothesis_correct;
  // Set when the instance failed at the backend; the rest is then empty.
  std::optional<std::string> error;

  bool operator==(const ResultRecord&) const = default;
};

nlohmann::json to_json(const ScoredHypothesis& s);
ScoredHypothesis scored_hypothesis_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ResultRecord& r);
ResultRecord record_from_json(const nlohmann::json& j);

// One compact JSON object per line.
std::string serialize_record(const ResultRecord& r);

// Reads every newline-terminated line. A final line without its newline
// is a torn write and is ignored.
std::vector<ResultRecord> read_records(const std::filesystem::path& file);

}  // namespace harness
