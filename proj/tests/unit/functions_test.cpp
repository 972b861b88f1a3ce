#include <set>

#include <gtest/gtest.h>

#include "harness/functions.hpp"
#include "scratch.hpp"

using namespace harness;
using namespace harness::functions;

TEST(ParseLinear, AcceptedForms) {
  const ParsedLinear want{Rational(20), Rational(-13)};
  for (const char* text : {"f(x) = 20x - 13", "y = 20x - 13", "Output: y = -13x^0 + 20x^1", "y=20x^1-13x^0",
                           "OUTPUT:  Y = 20X + -13", "Some thoughts first.\nOutput: y = -13x^0 + 20x^1"}) {
    const auto p = parse_linear_hypothesis(text);
    ASSERT_TRUE(p.has_value()) << text;
    EXPECT_EQ(*p, want) << text;
  }
  const auto frac = parse_linear_hypothesis("y = 1/2x^0 + 2.5x^1");
  ASSERT_TRUE(frac);
  EXPECT_EQ(frac->intercept, Rational(1, 2));
  EXPECT_EQ(frac->slope, Rational(5, 2));
}

TEST(ParseLinear, RejectsOtherShapes) {
  for (const char* text : {"", "y = ax + b", "y = 3x^2 + 1", "the slope is 20", "y = 20x - 13 + z"}) {
    EXPECT_FALSE(parse_linear_hypothesis(text).has_value()) << text;
  }
}

TEST(ParseLinear, CanonicalRenderingRoundTrips) {
  for (int a : {-20, -1, 0, 3}) {
    for (int b : {-7, 0, 12}) {
      const LinearFunction f{a, b};
      EXPECT_EQ(parse_linear_hypothesis(render_linear(f)), to_parsed(f)) << render_linear(f);
    }
  }
  EXPECT_EQ(render_linear(LinearFunction{20, -13}), "y = 20x - 13");
}

TEST(Numbers, ExtractAndFormat) {
  EXPECT_EQ(extract_number("The answer is -213."), Rational(-213));
  EXPECT_EQ(extract_number("Output: 7/2"), Rational(7, 2));
  EXPECT_EQ(extract_number("about 2.50 or so"), Rational(5, 2));
  EXPECT_FALSE(extract_number("no digits here").has_value());
  EXPECT_EQ(format_rational(Rational(-6, 4)), "-3/2");
  EXPECT_EQ(format_rational(Rational(8)), "8");
}

TEST(ExternalValidator, ExactRationalScores) {
  const std::vector<Example> pairs = {{"1", "3"}, {"2", "5"}, {"4", "9"}};
  EXPECT_EQ(external_validate({"y = 2x + 1", std::nullopt, std::nullopt}, pairs), 0.0);
  // Off by one everywhere.
  EXPECT_EQ(external_validate({"y = 2x + 2", std::nullopt, std::nullopt}, pairs), -1.0);
  EXPECT_EQ(mean_squared_error(ParsedLinear{Rational(2), Rational(4, 3)}, pairs), Rational(1, 9));
  EXPECT_TRUE(is_minus_infinity(external_validate({"no idea", std::nullopt, std::nullopt}, pairs)));
  EXPECT_THROW(external_validate({"y = x", std::nullopt, std::nullopt}, {{"a", "1"}}), NonNumericExample);
}

TEST(Suite, ShapeAndDeterminism) {
  const auto a = gen_function_suite(5);
  const auto b = gen_function_suite(5);
  ASSERT_EQ(a.functions.size(), 40u);
  std::set<std::pair<int, int>> distinct;
  for (std::size_t i = 0; i < a.functions.size(); ++i) {
    const auto& f = a.functions[i];
    EXPECT_EQ(f.function, b.functions[i].function);
    distinct.emplace(f.function.slope, f.function.intercept);
    EXPECT_GE(f.function.slope, kCoefficientMin);
    EXPECT_LE(f.function.intercept, kCoefficientMax);
    ASSERT_EQ(f.tests.size(), 5u);
    for (const auto& t : f.tests) {
      ASSERT_EQ(t.in_context.size(), 5u);
      std::set<std::string> xs;
      for (const auto& ex : t.in_context) {
        xs.insert(ex.source);
        EXPECT_EQ(Rational(ex.target), apply_linear(f.function, Rational(ex.source)));
      }
      EXPECT_EQ(xs.size(), 5u);
      EXPECT_FALSE(xs.contains(t.query.source));
    }
  }
  EXPECT_EQ(distinct.size(), 40u);
  EXPECT_NE(gen_function_suite(6).functions.front().tests.front().query, a.functions.front().tests.front().query);
}

TEST(Suite, FileRoundTrip) {
  harness::testing::ScratchDir dir("suite");
  const auto suite = gen_function_suite(9);
  write_suite(suite, dir / "s.jsonl");
  const auto back = read_suite(dir / "s.jsonl");
  const auto want = suite.instances();
  const auto got = back.instances();
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(got[i].id, want[i].id);
    EXPECT_EQ(got[i].in_context, want[i].in_context);
    EXPECT_EQ(got[i].query, want[i].query);
  }
  EXPECT_EQ(back.truth(), suite.truth());
}

TEST(EvalFunctions, AccuracyErrorAndCoefficients) {
  std::map<std::string, LinearFunction> truth;
  std::vector<ResultRecord> records;
  for (int i = 0; i < 6; ++i) {
    const LinearFunction f{i - 2, 2 * i};
    const std::string id = "fn0" + std::to_string(i) + "-0";
    truth[id] = f;
    ResultRecord r;
    r.instance_id = id;
    r.query = "3";
    const auto y = apply_linear(f, Rational(3));
    r.parsed_output = format_rational(i < 4 ? y : y + 2);
    r.chosen_hypothesis = ScoredHypothesis{{render_linear(f), std::nullopt, render_linear(f)},
                                           RerankMethod::external_validator, 0.0};
    records.push_back(r);
  }
  records.back().parsed_output.reset();
  const auto report = eval_functions(records, truth);
  EXPECT_NEAR(report.accuracy, 4.0 / 6.0, 1e-15);
  EXPECT_EQ(report.parseable_outputs, 5u);
  ASSERT_TRUE(report.median_squared_error);
  EXPECT_EQ(*report.median_squared_error, 0.0);
  ASSERT_TRUE(report.slope_correlation);
  EXPECT_DOUBLE_EQ(report.slope_correlation->coefficient, 1.0);
  EXPECT_THROW(eval_functions({}, truth), EmptyInput);
}
