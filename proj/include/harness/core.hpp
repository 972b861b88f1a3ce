#pragma once

#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "harness/error.hpp"

namespace harness {

enum class Domain { functions, colours, translation };

enum class SettingKind { few_shot, zs_cot, true_instruction, instruction_inference };

enum class RerankMethod { verbal_conf, p_data, p_answer, external_validator };

std::string to_string(Domain d);
std::string to_string(SettingKind k);
std::string to_string(RerankMethod m);
Domain parse_domain(std::string_view text);
SettingKind parse_setting_kind(std::string_view text);
RerankMethod parse_rerank_method(std::string_view text);

struct Example {
  std::string source;
  std::string target;

  bool operator==(const Example&) const = default;
};

struct TaskInstance {
  std::string id;
  Domain domain = Domain::functions;
  std::vector<Example> in_context;
  Example query;
};

// Throws PreconditionViolation when the instance breaks its invariants.
void validate(const TaskInstance& instance);

// A prompting regime. The rerank method is present exactly for
// instruction inference; use make() to get a checked value.
class Setting {
 public:
  static Setting make(SettingKind kind, std::optional<RerankMethod> rerank = std::nullopt);
  // "few_shot", "instruction_inference:p_data", ...
  static Setting parse(std::string_view text);

  SettingKind kind() const { return kind_; }
  const std::optional<RerankMethod>& rerank() const { return rerank_; }
  std::string name() const;

  bool operator==(const Setting&) const = default;

  static std::vector<Setting> all();

 private:
  Setting(SettingKind kind, std::optional<RerankMethod> rerank) : kind_(kind), rerank_(rerank) {}

  SettingKind kind_;
  std::optional<RerankMethod> rerank_;
};

struct Hypothesis {
  std::string raw;
  std::optional<std::string> word;
  // Canonical rendering of the domain-parsed rule; re-parsing it yields the
  // same rule.
  std::optional<std::string> parsed;

  bool operator==(const Hypothesis&) const = default;
};

inline constexpr double kMinusInfinity = -std::numeric_limits<double>::infinity();

inline bool is_minus_infinity(double score) { return score == kMinusInfinity; }

struct ScoredHypothesis {
  Hypothesis hypothesis;
  RerankMethod method = RerankMethod::verbal_conf;
  double score = kMinusInfinity;

  bool operator==(const ScoredHypothesis&) const = default;
};

struct ParsedAnswer {
  std::string answer;
  bool marked = false;
};

inline constexpr std::string_view kOutputMarker = "Output:";
inline constexpr std::string_view kFinalOutputMarker = "Final Output:";

// Text after the last occurrence of `marker`, trimmed. Without a marker the
// whole reply is returned (trimmed) and `marked` is false.
ParsedAnswer parse_model_output(std::string_view reply, std::string_view marker);

// Marker a setting's answers are preceded by.
std::string_view answer_marker(SettingKind kind);

// String helpers shared across domains.
std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
// Collapse internal whitespace runs to a single space and trim.
std::string normalize_whitespace(std::string_view s);
bool contains_ci(std::string_view haystack, std::string_view needle);

}  // namespace harness
