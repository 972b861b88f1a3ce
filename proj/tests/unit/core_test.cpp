#include <gtest/gtest.h>

#include "harness/core.hpp"
#include "harness/example_io.hpp"
#include "harness/prompt_template.hpp"
#include "harness/records.hpp"
#include "scratch.hpp"

using namespace harness;

TEST(Setting, NamesRoundTrip) {
  for (const auto& s : Setting::all()) EXPECT_EQ(Setting::parse(s.name()), s);
  EXPECT_EQ(Setting::all().size(), 7u);
  EXPECT_EQ(Setting::parse("instruction_inference:p_answer").rerank(), RerankMethod::p_answer);
  EXPECT_THROW(Setting::parse("instruction_inference"), Error);
  EXPECT_THROW(Setting::parse("few_shot:p_data"), Error);
  EXPECT_THROW(Setting::parse("zero_shot"), Error);
}

TEST(ParseModelOutput, TakesTextAfterLastMarker) {
  const auto p = parse_model_output("Output: 3\nOn reflection,\nOutput:  42 \n", "Output:");
  EXPECT_TRUE(p.marked);
  EXPECT_EQ(p.answer, "42");
  const auto bare = parse_model_output("  17\n", "Output:");
  EXPECT_FALSE(bare.marked);
  EXPECT_EQ(bare.answer, "17");
  EXPECT_EQ(parse_model_output("steps...\nFinal Output: blue", answer_marker(SettingKind::zs_cot)).answer, "blue");
  EXPECT_EQ(answer_marker(SettingKind::few_shot), "Output:");
  EXPECT_THROW(parse_model_output("x", ""), PreconditionViolation);
}

TEST(Strings, Helpers) {
  EXPECT_EQ(normalize_whitespace("  a \t b\n\nc "), "a b c");
  EXPECT_EQ(join({"a", "b", "c"}, ", "), "a, b, c");
  EXPECT_EQ(split_whitespace(" x  y ").size(), 2u);
  EXPECT_TRUE(contains_ci("Repeat Twice", "twice"));
}

TEST(PromptTemplate, FindsSlotsAndRendersOnce) {
  const auto t = PromptTemplate::from_body("t", "Q: {query} / {query} {a_1} {not a slot} {}");
  EXPECT_EQ(t.required_slots, (std::vector<std::string>{"query", "a_1"}));
  const auto out = render_template(t, {{"query", "{a_1}"}, {"a_1", "x"}});
  EXPECT_EQ(out, "Q: {a_1} / {a_1} x {not a slot} {}");
}

TEST(PromptTemplate, MissingAndExtraBindings) {
  const auto t = PromptTemplate::from_body("t", "{x} and {y}");
  EXPECT_THROW(render_template(t, {{"x", "1"}}), MissingSlot);
  EXPECT_EQ(render_template(t, {{"x", "1"}, {"y", "2"}, {"z", "3"}}), "1 and 2");
  EXPECT_THROW(render_template(t, {{"x", "1"}, {"y", "2"}, {"z", "3"}}, true), UnknownSlot);
}

TEST(PromptTemplate, ExampleSpansCoverOutputs) {
  const auto t = PromptTemplate::from_body("ex", "In: {input}\nOut: {output}");
  const std::vector<Example> examples = {{"1", "ten"}, {"2", "twenty"}};
  const auto block = render_examples(t, examples, "\n\n");
  ASSERT_EQ(block.answer_spans.size(), 2u);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto [b, e] = block.answer_spans[i];
    EXPECT_EQ(block.text.substr(b, e - b), examples[i].target);
  }
}

TEST(PromptTemplate, StoreLoadsShippedTemplates) {
  TemplateStore store(default_templates_dir());
  const auto few = store.get("functions", "few_shot");
  EXPECT_NE(std::find(few.required_slots.begin(), few.required_slots.end(), "query"), few.required_slots.end());
  EXPECT_FALSE(few.body.ends_with("\n"));
  EXPECT_THROW(store.get("functions", "no_such_template"), Error);
}

TEST(Records, JsonRoundTripAndTornTail) {
  ResultRecord r;
  r.model_id = "m";
  r.domain = Domain::colours;
  r.instance_id = "colours-001";
  r.setting = Setting::make(SettingKind::instruction_inference, RerankMethod::p_data);
  r.trial_index = 2;
  r.temperature = 1.0;
  r.raw_output = "Output: blue";
  r.parsed_output = "blue";
  r.correct = true;
  r.segment_chrf = 100.0;
  ScoredHypothesis h{{"lug -> blue", "lug", "lug -> blue"}, RerankMethod::p_data, -1.5};
  r.candidates = {h, ScoredHypothesis{{"??", "lug", std::nullopt}, RerankMethod::p_data, kMinusInfinity}};
  r.chosen_hypothesis = h;
  r.word_hypotheses.push_back(WordHypothesis{"lug", h, r.candidates, true, std::nullopt, false});

  const auto line = serialize_record(r);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_EQ(record_from_json(nlohmann::json::parse(line)), r);

  harness::testing::ScratchDir dir("records");
  {
    std::ofstream out(dir / "r.jsonl");
    out << line << '\n' << line << '\n' << line.substr(0, line.size() / 2);
  }
  EXPECT_EQ(read_records(dir / "r.jsonl").size(), 2u);
}

TEST(ExampleIo, RoundTripAndErrors) {
  harness::testing::ScratchDir dir("examples");
  const std::vector<Example> rows = {{"a b", "c"}, {"ü", "ë"}};
  write_examples(rows, dir / "x.jsonl");
  EXPECT_EQ(read_examples(dir / "x.jsonl"), rows);
  {
    std::ofstream out(dir / "bad.jsonl");
    out << "{\"source\": \"a\", \"target\": \"b\"}\nnot json\n";
  }
  EXPECT_THROW(read_examples(dir / "bad.jsonl"), FormatError);
  EXPECT_THROW(read_examples(dir / "missing.jsonl"), IoError);
}
