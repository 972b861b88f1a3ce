#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "harness/core.hpp"
#include "harness/metrics.hpp"
#include "harness/records.hpp"

namespace harness::functions {

using Rational = boost::multiprecision::cpp_rational;

inline constexpr int kCoefficientMin = -20;
inline constexpr int kCoefficientMax = 20;
inline constexpr int kFunctionCount = 40;
inline constexpr int kTestsPerFunction = 5;
inline constexpr int kInContextCount = 5;

class NonNumericExample : public Error {
 public:
  using Error::Error;
};

// f(x) = slope * x + intercept over the integer grid.
struct LinearFunction {
  int slope = 0;
  int intercept = 0;

  bool operator==(const LinearFunction&) const = default;
};

struct ParsedLinear {
  Rational slope;
  Rational intercept;

  bool operator==(const ParsedLinear&) const = default;
};

struct FunctionTests {
  LinearFunction function;
  std::vector<TaskInstance> tests;
};

struct FunctionSuite {
  std::vector<FunctionTests> functions;
  std::uint64_t seed = 0;

  std::size_t test_count() const;
  std::vector<TaskInstance> instances() const;
  // Ground truth by instance id.
  std::map<std::string, LinearFunction> truth() const;
};

// Distinct functions; within each test the in-context x values are distinct
// and the query x differs from all of them.
FunctionSuite gen_function_suite(std::uint64_t seed);

Rational apply_linear(const LinearFunction& f, const Rational& x);
Rational apply_linear(const ParsedLinear& f, const Rational& x);

ParsedLinear to_parsed(const LinearFunction& f);

// Canonical text "y = 20x - 13"; parse_linear_hypothesis inverts it.
std::string render_linear(const ParsedLinear& f);
std::string render_linear(const LinearFunction& f);

// Accepts `y = C0x^0 + C1x^1` in either order, `y = Ax + B` and
// `f(x) = Ax + B`, case- and whitespace-insensitively, optionally after an
// "Output:" marker. Coefficients may be integers, decimals or fractions.
// Returns nullopt for anything else, including symbolic coefficients.
std::optional<ParsedLinear> parse_linear_hypothesis(std::string_view raw);

// Parses a numeric literal ("-213", "2.5", "7/2").
std::optional<Rational> parse_number(std::string_view text);

// First numeric literal in a model answer.
std::optional<Rational> extract_number(std::string_view answer);

std::string format_rational(const Rational& r);

// Negative mean squared error of the parsed hypothesis on `in_context`, or
// minus infinity when the hypothesis does not parse.
double external_validate(const Hypothesis& h, const std::vector<Example>& in_context);

// Exact mean squared error over the in-context pairs.
Rational mean_squared_error(const ParsedLinear& f, const std::vector<Example>& in_context);

struct FunctionsReport {
  double accuracy = 0.0;
  std::optional<double> median_squared_error;
  std::optional<metrics::CorrelationResult> slope_correlation;
  std::optional<metrics::CorrelationResult> intercept_correlation;
  std::size_t records = 0;
  std::size_t parseable_outputs = 0;
  std::size_t parseable_hypotheses = 0;
};

FunctionsReport eval_functions(const std::vector<ResultRecord>& records, const std::map<std::string, LinearFunction>& truth);

// JSONL, one row per instance:
// {id, slope, intercept, in_context: [[x, y], ...], query_x, query_y}.
void write_suite(const FunctionSuite& suite, const std::filesystem::path& file);
FunctionSuite read_suite(const std::filesystem::path& file);

}  // namespace harness::functions
