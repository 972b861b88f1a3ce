#include "harness/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <boost/program_options.hpp>

#include "harness/colours.hpp"
#include "harness/example_io.hpp"
#include "harness/functions.hpp"
#include "harness/metrics.hpp"
#include "harness/prompt_template.hpp"
#include "harness/rerank.hpp"

#ifndef HARNESS_GIT_DESCRIBE
#define HARNESS_GIT_DESCRIBE "unknown"
#endif
#ifndef HARNESS_DATA_DIR
#define HARNESS_DATA_DIR "data"
#endif

namespace harness {

using nlohmann::json;
namespace po = boost::program_options;

namespace {

std::string iso_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string file_safe(std::string s) {
  for (auto& c : s) {
    if (c == ':' || c == '/' || c == '\\' || c == ' ') c = '-';
  }
  return s;
}

bool is_llama(const std::string& model) { return contains_ci(model, "llama"); }

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": " + text);
  }
}

long long parse_int(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": " + text);
  }
}

std::filesystem::path data_root() {
  if (const char* env = std::getenv("HARNESS_DATA_DIR"); env && *env) return env;
  return HARNESS_DATA_DIR;
}

bool is_backend_failure(const std::exception& e) {
  return dynamic_cast<const TransportError*>(&e) || dynamic_cast<const ReplayMiss*>(&e) ||
         dynamic_cast<const Unsupported*>(&e) || dynamic_cast<const CorruptRecording*>(&e) ||
         dynamic_cast<const NoAnswerTokens*>(&e);
}

}  // namespace

std::string to_string(CacheMode m) {
  switch (m) {
    case CacheMode::off:
      return "off";
    case CacheMode::record:
      return "record";
    case CacheMode::replay:
      return "replay";
  }
  return "off";
}

CacheMode parse_cache_mode(std::string_view text) {
  if (text == "off") return CacheMode::off;
  if (text == "record") return CacheMode::record;
  if (text == "replay") return CacheMode::replay;
  throw ConfigError("unknown cache_mode: " + std::string(text));
}

std::vector<TemperatureStep> parse_schedule(std::string_view text) {
  std::vector<TemperatureStep> out;
  std::string item;
  std::istringstream in{std::string(text)};
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("schedule entries look like T:reps, got " + item);
    TemperatureStep step{parse_double("temperature_schedule", trim(item.substr(0, colon))),
                         static_cast<int>(parse_int("temperature_schedule", trim(item.substr(colon + 1))))};
    if (step.repetitions < 1) throw ConfigError("schedule repetitions must be >= 1");
    out.push_back(step);
  }
  if (out.empty()) throw ConfigError("empty temperature schedule");
  return out;
}

std::string format_schedule(const std::vector<TemperatureStep>& schedule) {
  std::vector<std::string> parts;
  for (const auto& s : schedule) {
    std::ostringstream out;
    out << s.temperature << ':' << s.repetitions;
    parts.push_back(out.str());
  }
  return join(parts, ",");
}

std::vector<double> RunConfig::trial_temperatures() const {
  std::vector<double> out;
  for (const auto& s : schedule) out.insert(out.end(), s.repetitions, s.temperature);
  return out;
}

void RunConfig::validate() const {
  if (model_id.empty()) throw ConfigError("model_id is required");
  if (settings.empty()) throw ConfigError("no settings selected");
  if (n_hypotheses < 1) throw ConfigError("n_hypotheses must be >= 1");
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  int reps = 0;
  for (const auto& s : schedule) {
    if (s.temperature < 0 || s.temperature > 2) throw ConfigError("schedule temperature outside [0, 2]");
    reps += s.repetitions;
  }
  if (reps != trials) {
    throw ConfigError("temperature schedule covers " + std::to_string(reps) + " trials, expected " +
                      std::to_string(trials));
  }
  for (double t : {hypothesis_temperature, confidence_temperature, grammar_temperature}) {
    if (t < 0 || t > 2) throw ConfigError("temperature outside [0, 2]");
  }
  if (max_tokens && *max_tokens < 1) throw ConfigError("max_tokens must be positive");
  if (domain == Domain::translation && directions.empty()) throw ConfigError("no translation direction selected");
  if (grammar_batch < 1 || grammar_max_iters < 1) throw ConfigError("grammar batch and iterations must be >= 1");
}

RunConfig parse_run_config(std::string_view text) {
  po::options_description desc;
  const char* keys[] = {"model_id",        "scorer_model_id",        "domain",
                        "setting",         "n_hypotheses",           "trials",
                        "temperature_schedule", "hypothesis_temperature", "confidence_temperature",
                        "grammar_temperature",  "seed",              "parallelism",
                        "data_dir",        "templates_dir",          "output_dir",
                        "cache_mode",      "cache_dir",              "base_url",
                        "api_key_env",     "max_tokens",             "limit",
                        "direction",       "grammar_batch",          "grammar_max_iters"};
  for (const char* k : keys) desc.add_options()(k, po::value<std::string>());

  po::variables_map vm;
  try {
    std::istringstream in{std::string(text)};
    po::store(po::parse_config_file(in, desc, false), vm);
  } catch (const po::error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  auto get = [&](const char* key) -> std::optional<std::string> {
    if (!vm.count(key)) return std::nullopt;
    return trim(vm[key].as<std::string>());
  };

  RunConfig cfg;
  cfg.model_id = get("model_id").value_or("");
  if (cfg.model_id.empty()) throw ConfigError("model_id is required");
  const auto domain = get("domain");
  if (!domain) throw ConfigError("domain is required");
  try {
    cfg.domain = parse_domain(*domain);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const bool llama = is_llama(cfg.model_id);
  const bool translation = cfg.domain == Domain::translation;

  cfg.scorer_model_id = get("scorer_model_id").value_or(cfg.model_id);
  const auto setting_text = get("setting").value_or("all");
  if (setting_text == "all") {
    cfg.settings = Setting::all();
  } else {
    std::istringstream in(setting_text);
    std::string item;
    while (std::getline(in, item, ',')) {
      if (trim(item).empty()) continue;
      try {
        cfg.settings.push_back(Setting::parse(trim(item)));
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    }
  }

  if (auto v = get("n_hypotheses")) cfg.n_hypotheses = static_cast<int>(parse_int("n_hypotheses", *v));
  const std::string default_schedule = translation ? "0.05:1" : (llama ? "0.1:3,1:3" : "0:3,1:3");
  cfg.schedule = parse_schedule(get("temperature_schedule").value_or(default_schedule));
  int reps = 0;
  for (const auto& s : cfg.schedule) reps += s.repetitions;
  cfg.trials = get("trials") ? static_cast<int>(parse_int("trials", *get("trials"))) : reps;

  cfg.hypothesis_temperature = (llama && cfg.domain == Domain::functions) ? 1.0625 : 1.0;
  if (auto v = get("hypothesis_temperature")) cfg.hypothesis_temperature = parse_double("hypothesis_temperature", *v);
  if (auto v = get("confidence_temperature")) cfg.confidence_temperature = parse_double("confidence_temperature", *v);
  cfg.grammar_temperature = llama ? 1.0 : 0.7;
  if (auto v = get("grammar_temperature")) cfg.grammar_temperature = parse_double("grammar_temperature", *v);

  if (auto v = get("seed")) cfg.seed = static_cast<std::uint64_t>(parse_int("seed", *v));
  if (auto v = get("parallelism")) cfg.parallelism = static_cast<int>(parse_int("parallelism", *v));
  cfg.data_dir = get("data_dir").value_or("data");
  cfg.templates_dir = get("templates_dir") ? std::filesystem::path(*get("templates_dir")) : default_templates_dir();
  cfg.output_dir = get("output_dir").value_or("runs");
  cfg.cache_mode = parse_cache_mode(get("cache_mode").value_or("off"));
  cfg.cache_dir = get("cache_dir").value_or("cache");
  cfg.base_url = get("base_url").value_or("https://api.openai.com/v1");
  cfg.api_key_env = get("api_key_env").value_or("HARNESS_API_KEY");
  if (auto v = get("max_tokens")) cfg.max_tokens = static_cast<int>(parse_int("max_tokens", *v));
  if (auto v = get("limit")) {
    const auto n = parse_int("limit", *v);
    if (n < 1) throw ConfigError("limit must be >= 1");
    cfg.limit = static_cast<std::size_t>(n);
  }
  if (auto v = get("direction")) {
    cfg.directions.clear();
    if (*v == "both") {
      cfg.directions = {translation::Direction::ek, translation::Direction::ke};
    } else {
      try {
        cfg.directions.push_back(translation::parse_direction(*v));
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    }
  }
  if (auto v = get("grammar_batch")) cfg.grammar_batch = static_cast<std::size_t>(parse_int("grammar_batch", *v));
  if (auto v = get("grammar_max_iters")) cfg.grammar_max_iters = static_cast<int>(parse_int("grammar_max_iters", *v));
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

json to_json(const RunConfig& c) {
  json settings = json::array();
  for (const auto& s : c.settings) settings.push_back(s.name());
  json directions = json::array();
  for (auto d : c.directions) directions.push_back(translation::to_string(d));
  return json{{"model_id", c.model_id},
              {"scorer_model_id", c.scorer_model_id},
              {"domain", to_string(c.domain)},
              {"settings", settings},
              {"n_hypotheses", c.n_hypotheses},
              {"trials", c.trials},
              {"temperature_schedule", format_schedule(c.schedule)},
              {"hypothesis_temperature", c.hypothesis_temperature},
              {"confidence_temperature", c.confidence_temperature},
              {"grammar_temperature", c.grammar_temperature},
              {"seed", c.seed},
              {"parallelism", c.parallelism},
              {"data_dir", c.data_dir.string()},
              {"templates_dir", c.templates_dir.string()},
              {"output_dir", c.output_dir.string()},
              {"cache_mode", to_string(c.cache_mode)},
              {"cache_dir", c.cache_dir.string()},
              {"base_url", c.base_url},
              {"api_key_env", c.api_key_env},
              {"max_tokens", c.max_tokens ? json(*c.max_tokens) : json(nullptr)},
              {"limit", c.limit ? json(*c.limit) : json(nullptr)},
              {"directions", directions},
              {"grammar_batch", c.grammar_batch},
              {"grammar_max_iters", c.grammar_max_iters}};
}

json to_json(const RunManifest& m) {
  json files = json::array();
  for (const auto& f : m.record_files) files.push_back(f.string());
  json sketch_files = json::object();
  for (const auto& [d, f] : m.sketch_files) sketch_files[d] = f.string();
  return json{{"config", m.config},
              {"git_describe", m.git_describe},
              {"started_at", m.started_at},
              {"finished_at", m.finished_at},
              {"completed", m.completed},
              {"counts",
               {{"records", m.counts.records},
                {"written", m.counts.written},
                {"resumed", m.counts.resumed},
                {"fallbacks", m.counts.fallbacks},
                {"parse_failures", m.counts.parse_failures},
                {"hypothesis_parse_failures", m.counts.hypothesis_parse_failures},
                {"backend_errors", m.counts.backend_errors}}},
              {"record_files", files},
              {"sketch_accuracy", m.sketch_accuracy},
              {"sketch_files", sketch_files}};
}

std::filesystem::path records_path(const std::filesystem::path& out_dir, const std::string& model_id, Domain domain,
                                   const Setting& setting) {
  return out_dir / file_safe(model_id + "__" + to_string(domain) + "__" + setting.name() + ".jsonl");
}

std::filesystem::path manifest_path(const std::filesystem::path& out_dir, const std::string& model_id, Domain domain) {
  return out_dir / file_safe(model_id + "__" + to_string(domain) + "__manifest.json");
}

std::filesystem::path fixture_language_dir() { return data_root() / "fixture"; }
std::filesystem::path default_templates_dir() { return data_root() / "templates"; }

namespace {

// Shared plumbing for one run: templates, backends and request building.
class Engine {
 public:
  Engine(const RunConfig& cfg, const RunBackends& backends, const std::vector<std::string>& template_ids)
      : cfg_(cfg), backends_(backends), store_(cfg.templates_dir) {
    for (const auto& id : template_ids) templates_.emplace(id, store_.get(to_string(cfg.domain), id));
  }

  const RunConfig& config() const { return cfg_; }

  const PromptTemplate& tmpl(const std::string& id) const {
    const auto it = templates_.find(id);
    if (it == templates_.end()) throw PreconditionViolation("template not loaded: " + id);
    return it->second;
  }

  std::string render(const std::string& id, const Bindings& b) const { return render_template(tmpl(id), b); }

  std::string generate(const std::string& system_id, std::string user, double temperature,
                       std::string sample_tag) const {
    GenerationRequest request;
    request.system = render(system_id, {});
    request.user = std::move(user);
    request.temperature = temperature;
    request.max_tokens = cfg_.max_tokens;
    request.model_id = cfg_.model_id;
    request.sample_tag = std::move(sample_tag);
    return backends_.chat->chat_generate(request);
  }

  Scorers scorers(ExternalValidator external) const {
    Scorers s;
    s.verbal = VerbalScorer{backends_.chat, cfg_.model_id, render("system_base", {}), tmpl("confidence"),
                            cfg_.confidence_temperature};
    s.logprob = LogprobScorer{backends_.logprobs, cfg_.scorer_model_id, tmpl("data_logprob")};
    s.external = std::move(external);
    return s;
  }

  // n sampled hypotheses for one prompt, parsed by `parse` and scored.
  std::vector<ScoredHypothesis> sample_and_score(const std::string& user, const std::string& tag_prefix,
                                                 const std::function<Hypothesis(std::string)>& parse,
                                                 RerankMethod method, const RerankContext& ctx,
                                                 const Scorers& scorers) const {
    std::vector<ScoredHypothesis> out;
    for (int k = 0; k < cfg_.n_hypotheses; ++k) {
      auto raw = generate("system_hypothesis", user, cfg_.hypothesis_temperature,
                          tag_prefix + ":i" + std::to_string(k));
      out.push_back(score_hypothesis(method, parse(std::move(raw)), ctx, scorers));
    }
    return out;
  }

 private:
  const RunConfig& cfg_;
  RunBackends backends_;
  TemplateStore store_;
  std::map<std::string, PromptTemplate> templates_;
};

const std::vector<std::string> kPlainTemplates = {
    "system_base", "system_hypothesis", "system_instruction", "example",    "few_shot",    "zs_cot",
    "true_instruction", "self_induced", "induction",          "confidence", "data_logprob"};

const std::vector<std::string> kTranslationTemplates = {
    "system_base", "system_hypothesis", "system_instruction", "example",   "header",     "ref_block",
    "ref_pair",    "dict_block",        "sketch_block",       "cot",       "footer",     "induction",
    "confidence",  "data_logprob",      "grammar_feature"};

ResultRecord base_record(const RunConfig& cfg, const TaskInstance& inst, const Setting& setting, int trial,
                         double temperature) {
  ResultRecord r;
  r.model_id = cfg.model_id;
  r.domain = cfg.domain;
  r.instance_id = inst.id;
  r.setting = setting;
  r.trial_index = trial;
  r.temperature = temperature;
  r.query = inst.query.source;
  r.reference = inst.query.target;
  return r;
}

class DomainTask {
 public:
  virtual ~DomainTask() = default;
  virtual std::vector<TaskInstance> instances() const = 0;
  // Work shared by every instance of the pending settings; runs once,
  // sequentially, before any instance.
  virtual void prepare(const std::vector<TaskInstance>&, const std::vector<Setting>&, RunManifest&) {}
  virtual ResultRecord run(const TaskInstance& inst, const Setting& setting, int trial, double temperature) const = 0;
};

// Shared by the functions and colours domains: one answer prompt built from
// the in-context block and the query.
class PlainTask : public DomainTask {
 public:
  PlainTask(const RunConfig& cfg, const RunBackends& backends) : engine_(cfg, backends, kPlainTemplates) {}

 protected:
  std::string examples_block(const std::vector<Example>& examples) const {
    return render_examples(engine_.tmpl("example"), examples, "\n\n").text;
  }

  // Sends the answer prompt for `kind` (few_shot, zs_cot, or an instructed
  // prompt when `instruction` is set) and fills the raw reply.
  std::string answer(ResultRecord& r, const TaskInstance& inst, SettingKind kind,
                     const std::optional<std::string>& instruction, const std::string& template_id) const {
    Bindings b{{"examples", examples_block(inst.in_context)}, {"query", inst.query.source}};
    if (instruction) b["instruction"] = *instruction;
    const std::string system = instruction ? "system_instruction" : "system_base";
    const auto reply = engine_.generate(system, engine_.render(template_id, b), r.temperature,
                                        "answer:t" + std::to_string(r.trial_index));
    r.raw_output = reply;
    const auto parsed = parse_model_output(reply, answer_marker(kind));
    r.marked = parsed.marked;
    return parsed.answer;
  }

  static std::string template_for(SettingKind kind) {
    switch (kind) {
      case SettingKind::few_shot:
        return "few_shot";
      case SettingKind::zs_cot:
        return "zs_cot";
      case SettingKind::true_instruction:
        return "true_instruction";
      case SettingKind::instruction_inference:
        return "self_induced";
    }
    return "few_shot";
  }

  Engine engine_;
};

class FunctionsTask : public PlainTask {
 public:
  FunctionsTask(const RunConfig& cfg, const RunBackends& backends)
      : PlainTask(cfg, backends), suite_(functions::read_suite(cfg.data_dir / "functions_suite.jsonl")) {
    truth_ = suite_.truth();
  }

  std::vector<TaskInstance> instances() const override { return suite_.instances(); }

  ResultRecord run(const TaskInstance& inst, const Setting& setting, int trial, double temperature) const override {
    const auto& cfg = engine_.config();
    auto r = base_record(cfg, inst, setting, trial, temperature);
    const auto& truth = truth_.at(inst.id);
    r.truth_rule = functions::render_linear(truth);

    auto kind = setting.kind();
    std::optional<std::string> instruction;
    if (kind == SettingKind::true_instruction) instruction = *r.truth_rule;
    if (kind == SettingKind::instruction_inference) {
      const auto ctx = make_rerank_context(engine_.tmpl("example"), inst.in_context);
      const auto scorers =
          engine_.scorers([&](const Hypothesis& h) { return functions::external_validate(h, inst.in_context); });
      const auto user = engine_.render("induction", {{"examples", examples_block(inst.in_context)}});
      r.candidates = engine_.sample_and_score(
          user, "hyp:t" + std::to_string(trial),
          [](std::string raw) {
            Hypothesis h{std::move(raw), std::nullopt, std::nullopt};
            if (const auto p = functions::parse_linear_hypothesis(h.raw)) h.parsed = functions::render_linear(*p);
            return h;
          },
          *setting.rerank(), ctx, scorers);
      const auto selection = select_best(r.candidates);
      if (selection.index) {
        r.chosen_hypothesis = r.candidates[*selection.index];
        instruction = r.chosen_hypothesis->hypothesis.parsed;
        r.hypothesis_correct =
            functions::parse_linear_hypothesis(r.chosen_hypothesis->hypothesis.raw) == functions::to_parsed(truth);
      } else {
        r.fallback_used = true;
        kind = SettingKind::few_shot;
      }
    }

    const auto text = answer(r, inst, kind, instruction, template_for(kind));
    const auto value = functions::extract_number(text);
    const auto expected = functions::apply_linear(truth, functions::Rational(std::stoi(inst.query.source)));
    if (value) {
      r.parsed_output = functions::format_rational(*value);
      r.correct = *value == expected;
      const functions::Rational residual = *value - expected;
      r.squared_error = (residual * residual).convert_to<double>();
    }
    return r;
  }

 private:
  functions::FunctionSuite suite_;
  std::map<std::string, functions::LinearFunction> truth_;
};

class ColoursTask : public PlainTask {
 public:
  ColoursTask(const RunConfig& cfg, const RunBackends& backends)
      : PlainTask(cfg, backends),
        train_(read_examples(cfg.data_dir / "colours_train.jsonl")),
        test_(read_examples(cfg.data_dir / "colours_test.jsonl")),
        grammar_(std::filesystem::exists(cfg.data_dir / "colours_grammar.txt")
                     ? colours::ColourGrammar::load(cfg.data_dir / "colours_grammar.txt")
                     : colours::ColourGrammar::canonical()) {
    for (const auto& t : grammar_.repeat_tokens()) repeat_tokens_.insert(t);
  }

  std::vector<TaskInstance> instances() const override {
    std::vector<TaskInstance> out;
    const auto fewshot = colours::fixed_fewshot();
    for (std::size_t i = 0; i < test_.size(); ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "colours-%03zu", i);
      out.push_back(TaskInstance{id, Domain::colours, fewshot, test_[i]});
    }
    return out;
  }

  ResultRecord run(const TaskInstance& inst, const Setting& setting, int trial, double temperature) const override {
    const auto& cfg = engine_.config();
    auto r = base_record(cfg, inst, setting, trial, temperature);
    r.truth_rule = grammar_.render();

    auto kind = setting.kind();
    std::optional<std::string> instruction;
    if (kind == SettingKind::true_instruction) instruction = *r.truth_rule;
    if (kind == SettingKind::instruction_inference) {
      std::vector<std::pair<std::string, std::string>> rules;
      bool all_correct = true;
      std::vector<std::string> words;
      for (const auto& t : split_whitespace(inst.query.source)) {
        if (std::find(words.begin(), words.end(), t) == words.end()) words.push_back(t);
      }
      for (const auto& word : words) {
        auto wh = induce_word(word, trial, *setting.rerank());
        r.candidates.insert(r.candidates.end(), wh.candidates.begin(), wh.candidates.end());
        if (wh.chosen) {
          rules.emplace_back(word, colours::parse_colour_rule(wh.chosen->hypothesis.raw).meaning.text);
        }
        all_correct = all_correct && wh.correct.value_or(false);
        r.word_hypotheses.push_back(std::move(wh));
      }
      r.hypothesis_correct = all_correct;
      if (rules.empty()) {
        r.fallback_used = true;
        kind = SettingKind::few_shot;
      } else {
        instruction = colours::assemble_colour_grammar_text(rules);
      }
    }

    const auto text = answer(r, inst, kind, instruction, template_for(kind));
    r.parsed_output = normalize_whitespace(to_lower(text));
    r.correct = *r.parsed_output == normalize_whitespace(inst.query.target);
    r.segment_chrf = metrics::chrf_segment(inst.query.target, *r.parsed_output);
    return r;
  }

 private:
  WordHypothesis induce_word(const std::string& word, int trial, RerankMethod method) const {
    const auto& cfg = engine_.config();
    WordHypothesis wh;
    wh.word = word;
    std::vector<Example> examples;
    try {
      examples = colours::retrieve_word_examples(word, train_, 5, fnv1a(word, cfg.seed * 1000003ull + trial));
    } catch (const colours::WordAbsent&) {
      wh.correct = false;
      return wh;
    }
    const auto ctx = make_rerank_context(engine_.tmpl("example"), examples, word);
    const auto scorers = engine_.scorers(
        [&](const Hypothesis& h) { return colours::external_validate(h, examples, repeat_tokens_); });
    const auto user = engine_.render("induction", {{"word", word}, {"examples", examples_block(examples)}});
    wh.candidates = engine_.sample_and_score(
        user, "hyp:t" + std::to_string(trial),
        [&](std::string raw) {
          Hypothesis h{std::move(raw), word, std::nullopt};
          try {
            const auto parsed = colours::parse_colour_rule(h.raw);
            if (parsed.word == word && !parsed.meaning.text.empty()) h.parsed = word + " -> " + parsed.meaning.text;
          } catch (const colours::NoArrow&) {
          }
          return h;
        },
        method, ctx, scorers);
    const auto selection = select_best(wh.candidates);
    if (selection.index) {
      wh.chosen = wh.candidates[*selection.index];
      const auto meaning = colours::parse_colour_rule(wh.chosen->hypothesis.raw).meaning;
      try {
        wh.correct = colours::eval_colour_hypothesis(word, meaning, grammar_);
      } catch (const colours::UnknownWord&) {
        wh.correct = false;
      }
    } else {
      wh.correct = false;
    }
    return wh;
  }

  std::vector<Example> train_;
  std::vector<Example> test_;
  colours::ColourGrammar grammar_;
  std::set<std::string> repeat_tokens_;
};

class TranslationTask : public DomainTask {
 public:
  TranslationTask(const RunConfig& cfg, const RunBackends& backends)
      : engine_(cfg, backends, kTranslationTemplates), data_(translation::load_corpus(cfg.data_dir)) {
    for (auto d : {translation::Direction::ek, translation::Direction::ke}) {
      wordlists_.emplace(d, data_.wordlist_for(d));
    }
    templates_ = translation::TranslationTemplates{
        engine_.tmpl("header"), engine_.tmpl("ref_block"), engine_.tmpl("ref_pair"), engine_.tmpl("dict_block"),
        engine_.tmpl("sketch_block"), engine_.tmpl("cot"), engine_.tmpl("footer")};
  }

  std::vector<TaskInstance> instances() const override {
    std::vector<TaskInstance> out;
    for (auto d : engine_.config().directions) {
      const auto& corpus = data_.corpus(d);
      for (std::size_t i = 0; i < corpus.test.size(); ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "%s-%03zu", translation::to_string(d).c_str(), i);
        TaskInstance inst{id, Domain::translation, {}, corpus.test[i]};
        for (const auto& wr : references(inst.query.source, d)) {
          for (const auto& ex : wr.refs) {
            if (std::find(inst.in_context.begin(), inst.in_context.end(), ex) == inst.in_context.end()) {
              inst.in_context.push_back(ex);
            }
          }
        }
        out.push_back(std::move(inst));
      }
    }
    return out;
  }

  void prepare(const std::vector<TaskInstance>& instances, const std::vector<Setting>& settings,
               RunManifest& manifest) override {
    const auto& cfg = engine_.config();
    std::vector<Setting> induced;
    for (const auto& s : settings) {
      if (s.kind() == SettingKind::instruction_inference) induced.push_back(s);
    }
    if (induced.empty()) return;
    for (auto d : cfg.directions) {
      induce_sketch(d, manifest);
      for (const auto& s : induced) {
        translation::VocabHypothesisCache cache;
        auto& results = vocab_[{s.name(), d}];
        for (const auto& inst : instances) {
          if (direction_of(inst) != d) continue;
          for (const auto& word : translation::query_words(inst.query.source)) {
            first_instance_[d].emplace(word, inst.id);
            if (results.contains(word)) continue;
            results[word] = translation::induce_vocab(word, d, data_.corpus(d).rows, cache,
                                                      [&](const std::string& w, const std::vector<Example>& ex) {
                                                        return sample_vocab(w, ex, d, *s.rerank());
                                                      });
          }
        }
      }
    }
  }

  ResultRecord run(const TaskInstance& inst, const Setting& setting, int trial, double temperature) const override {
    const auto& cfg = engine_.config();
    const auto d = direction_of(inst);
    auto r = base_record(cfg, inst, setting, trial, temperature);

    translation::TranslationPromptParts parts;
    parts.query = inst.query.source;
    parts.references = references(inst.query.source, d);
    auto kind = setting.kind();
    const auto words = translation::query_words(inst.query.source);

    if (kind == SettingKind::true_instruction) {
      std::vector<translation::DictionaryHit> hits;
      for (const auto& word : words) {
        const auto [entry, translations] = translation::retrieve_wordlist_entry(word, wordlists_.at(d));
        hits.push_back({entry, join(translations, ", ")});
      }
      parts.dictionary = std::move(hits);
      parts.sketch = data_.sketch_text;
    }
    if (kind == SettingKind::instruction_inference) {
      const auto results = vocab_.find({setting.name(), d});
      const auto sketch = induced_sketch_.find(d);
      if (results == vocab_.end() || sketch == induced_sketch_.end()) {
        throw PreconditionViolation("translation induction was not prepared");
      }
      std::vector<translation::DictionaryHit> hits;
      for (const auto& word : words) {
        const auto& induced = results->second.at(word);
        WordHypothesis wh;
        wh.word = word;
        wh.candidates = induced.candidates;
        wh.chosen = induced.chosen;
        wh.cached = first_instance_.at(d).at(word) != inst.id;
        std::optional<std::string> guess;
        if (induced.chosen) guess = translation::parse_vocab_hypothesis(induced.chosen->hypothesis.raw);
        auto verdict = [&](bool exclude) -> std::optional<bool> {
          const auto v = translation::eval_vocab_hypothesis(word, guess, wordlists_.at(d), exclude);
          if (v == translation::VocabVerdict::skipped) return std::nullopt;
          return v == translation::VocabVerdict::correct;
        };
        wh.correct = verdict(false);
        wh.correct_excluding_morphology = verdict(true);
        if (guess) hits.push_back({word, *guess});
        r.candidates.insert(r.candidates.end(), wh.candidates.begin(), wh.candidates.end());
        r.word_hypotheses.push_back(std::move(wh));
      }
      if (hits.empty()) {
        r.fallback_used = true;
        kind = SettingKind::few_shot;
      } else {
        parts.dictionary = std::move(hits);
        parts.sketch = sketch->second;
      }
    }

    const auto user =
        translation::assemble_translation_prompt(kind, parts, templates_, data_.language, d);
    const bool instructed = kind == SettingKind::true_instruction || kind == SettingKind::instruction_inference;
    const auto reply = engine_.generate(instructed ? "system_instruction" : "system_base", user, temperature,
                                        "answer:t" + std::to_string(trial));
    r.raw_output = reply;
    const auto parsed = parse_model_output(reply, answer_marker(kind));
    r.marked = parsed.marked;
    r.parsed_output = normalize_whitespace(parsed.answer);
    r.correct = *r.parsed_output == normalize_whitespace(inst.query.target);
    r.segment_chrf = metrics::chrf_segment(inst.query.target, *r.parsed_output);
    return r;
  }

 private:
  static translation::Direction direction_of(const TaskInstance& inst) {
    return translation::parse_direction(inst.id.substr(0, 2));
  }

  std::vector<translation::WordReferences> references(const std::string& query, translation::Direction d) const {
    std::vector<translation::WordReferences> out;
    for (const auto& word : translation::query_words(query)) {
      out.push_back({word, translation::retrieve_refs(word, data_.corpus(d).rows, 2)});
    }
    return out;
  }

  Bindings language_bindings(translation::Direction d) const {
    return {{"language", data_.language.name},
            {"language_description", data_.language.description},
            {"source_language", data_.source_language(d)},
            {"target_language", data_.target_language(d)}};
  }

  std::string pairs_block(const std::vector<Example>& pairs, translation::Direction d) const {
    std::vector<std::string> out;
    for (const auto& ex : pairs) {
      auto b = language_bindings(d);
      b["source"] = ex.source;
      b["target"] = ex.target;
      out.push_back(engine_.render("ref_pair", b));
    }
    return join(out, "\n\n");
  }

  std::vector<ScoredHypothesis> sample_vocab(const std::string& word, const std::vector<Example>& examples,
                                             translation::Direction d, RerankMethod method) const {
    auto b = language_bindings(d);
    b["word"] = word;
    b["examples"] = pairs_block(examples, d);
    const auto ctx = make_rerank_context(engine_.tmpl("example"), examples, word);
    const auto scorers =
        engine_.scorers([&](const Hypothesis& h) { return translation::external_validate(h, examples); });
    return engine_.sample_and_score(
        engine_.render("induction", b), "vocab:" + translation::to_string(d),
        [&](std::string raw) {
          Hypothesis h{std::move(raw), word, std::nullopt};
          if (const auto t = translation::parse_vocab_hypothesis(h.raw)) h.parsed = word + " -> " + *t;
          return h;
        },
        method, ctx, scorers);
  }

  void induce_sketch(translation::Direction d, RunManifest& manifest) {
    if (induced_sketch_.contains(d)) return;
    const auto& cfg = engine_.config();
    std::vector<translation::FeatureSpec> specs;
    for (const auto& f : data_.sketch) specs.push_back(f.spec);
    std::map<std::string, std::string> answers;
    for (const auto& spec : specs) {
      const auto result = translation::induce_grammar_feature(
          spec, data_.corpus(d).rows,
          [&](const translation::FeatureSpec& f, const std::vector<Example>& pairs, int iteration) {
            auto b = language_bindings(d);
            b["question"] = f.question;
            b["choices"] = join(f.domain, "\n");
            b["pairs"] = pairs_block(pairs, d);
            return engine_.generate("system_hypothesis", engine_.render("grammar_feature", b),
                                    cfg.grammar_temperature,
                                    "grammar:" + translation::to_string(d) + ":" + f.id + ":" + std::to_string(iteration));
          },
          fnv1a(spec.id + translation::to_string(d), cfg.seed), cfg.grammar_batch, cfg.grammar_max_iters);
      answers[spec.id] = result.answer;
    }
    const auto text = translation::render_sketch(specs, answers);
    induced_sketch_[d] = text;
    const auto name = translation::to_string(d);
    manifest.sketch_accuracy[name] = translation::eval_grammar_sketch(answers, data_.sketch);
    const auto file = cfg.output_dir / file_safe(cfg.model_id + "__translation__" + name + "__sketch.txt");
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out << text << '\n';
    manifest.sketch_files[name] = file;
  }

  Engine engine_;
  translation::TranslationData data_;
  std::map<translation::Direction, translation::Wordlist> wordlists_;
  translation::TranslationTemplates templates_;
  std::map<translation::Direction, std::string> induced_sketch_;
  std::map<std::pair<std::string, translation::Direction>, std::map<std::string, translation::VocabInduction>> vocab_;
  std::map<translation::Direction, std::map<std::string, std::string>> first_instance_;
};

std::unique_ptr<DomainTask> make_task(const RunConfig& cfg, const RunBackends& backends) {
  switch (cfg.domain) {
    case Domain::functions:
      return std::make_unique<FunctionsTask>(cfg, backends);
    case Domain::colours:
      return std::make_unique<ColoursTask>(cfg, backends);
    case Domain::translation:
      return std::make_unique<TranslationTask>(cfg, backends);
  }
  throw ConfigError("unknown domain");
}

// Existing records of a file; a torn final line is cut off first.
std::vector<ResultRecord> load_existing(const std::filesystem::path& file) {
  if (!std::filesystem::exists(file)) return {};
  std::string content;
  {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    content = buf.str();
  }
  if (!content.empty() && content.back() != '\n') {
    const auto last = content.rfind('\n');
    std::filesystem::resize_file(file, last == std::string::npos ? 0 : last + 1);
  }
  return read_records(file);
}

struct WorkItem {
  std::size_t setting = 0;
  int trial = 0;
  std::size_t instance = 0;
};

}  // namespace

RunManifest run_experiment(const RunConfig& cfg, const RunBackends& backends, const RunOptions& options) {
  cfg.validate();
  if (!backends.chat) throw PreconditionViolation("run needs a chat backend");
  RunManifest manifest;
  manifest.config = to_json(cfg);
  manifest.git_describe = HARNESS_GIT_DESCRIBE;
  manifest.started_at = iso_now();
  std::filesystem::create_directories(cfg.output_dir);

  auto task = make_task(cfg, backends);
  auto instances = task->instances();
  if (cfg.limit && instances.size() > *cfg.limit) instances.resize(*cfg.limit);
  for (const auto& inst : instances) validate(inst);
  const auto temperatures = cfg.trial_temperatures();

  std::vector<WorkItem> items;
  std::vector<Setting> pending;
  for (std::size_t s = 0; s < cfg.settings.size(); ++s) {
    const auto path = records_path(cfg.output_dir, cfg.model_id, cfg.domain, cfg.settings[s]);
    manifest.record_files.push_back(path);
    std::set<std::pair<std::string, int>> done;
    for (const auto& r : load_existing(path)) done.emplace(r.instance_id, r.trial_index);
    manifest.counts.resumed += done.size();
    bool any = false;
    for (int t = 0; t < cfg.trials; ++t) {
      for (std::size_t i = 0; i < instances.size(); ++i) {
        if (done.contains({instances[i].id, t})) continue;
        items.push_back({s, t, i});
        any = true;
      }
    }
    if (any) pending.push_back(cfg.settings[s]);
  }

  task->prepare(instances, pending, manifest);

  auto compute = [&](const WorkItem& item) {
    const auto& inst = instances[item.instance];
    const auto& setting = cfg.settings[item.setting];
    try {
      return task->run(inst, setting, item.trial, temperatures[item.trial]);
    } catch (const std::exception& e) {
      if (!is_backend_failure(e)) throw;
      auto r = base_record(cfg, inst, setting, item.trial, temperatures[item.trial]);
      r.error = e.what();
      return r;
    }
  };

  std::vector<std::optional<ResultRecord>> results(items.size());
  std::vector<std::exception_ptr> failures(items.size());
  std::vector<char> ready(items.size(), 0);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};

  std::vector<std::thread> workers;
  const auto worker_count = std::min<std::size_t>(static_cast<std::size_t>(cfg.parallelism), items.size());
  for (std::size_t w = 0; w < worker_count; ++w) {
    workers.emplace_back([&] {
      while (!stop) {
        const auto i = next++;
        if (i >= items.size()) break;
        std::optional<ResultRecord> result;
        std::exception_ptr failure;
        try {
          result = compute(items[i]);
        } catch (...) {
          failure = std::current_exception();
        }
        {
          std::lock_guard lock(mu);
          results[i] = std::move(result);
          failures[i] = failure;
          ready[i] = 1;
        }
        cv.notify_all();
      }
    });
  }

  std::map<std::size_t, std::ofstream> writers;
  std::exception_ptr fatal;
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::optional<ResultRecord> record;
    {
      std::unique_lock lock(mu);
      cv.wait(lock, [&] { return ready[i] != 0; });
      if (failures[i]) {
        fatal = failures[i];
      } else {
        record = std::move(results[i]);
      }
    }
    if (fatal) break;
    auto& out = writers[items[i].setting];
    if (!out.is_open()) {
      out.open(manifest.record_files[items[i].setting], std::ios::binary | std::ios::app);
      if (!out) {
        fatal = std::make_exception_ptr(IoError("cannot append to " + manifest.record_files[items[i].setting].string()));
        break;
      }
    }
    out << serialize_record(*record) << '\n';
    out.flush();
    ++manifest.counts.written;
    if (options.stop_after && manifest.counts.written >= *options.stop_after) break;
  }
  stop = true;
  for (auto& w : workers) w.join();
  writers.clear();
  if (fatal) std::rethrow_exception(fatal);

  manifest.completed = manifest.counts.written == items.size();
  for (const auto& file : manifest.record_files) {
    if (!std::filesystem::exists(file)) continue;
    for (const auto& r : read_records(file)) {
      ++manifest.counts.records;
      if (r.fallback_used) ++manifest.counts.fallbacks;
      if (r.error) {
        ++manifest.counts.backend_errors;
        continue;
      }
      if (!r.marked) ++manifest.counts.parse_failures;
      auto count_unparsed = [&](const std::vector<ScoredHypothesis>& cs) {
        for (const auto& c : cs) {
          if (!c.hypothesis.parsed) ++manifest.counts.hypothesis_parse_failures;
        }
      };
      count_unparsed(r.candidates);
    }
  }
  manifest.finished_at = iso_now();
  std::ofstream out(manifest_path(cfg.output_dir, cfg.model_id, cfg.domain), std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest");
  out << to_json(manifest).dump(2) << '\n';
  return manifest;
}

std::map<std::string, std::size_t> gen_data(std::string_view domain, std::uint64_t seed,
                                            const std::filesystem::path& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  std::map<std::string, std::size_t> counts;
  if (domain == "functions") {
    const auto suite = functions::gen_function_suite(seed);
    functions::write_suite(suite, out / "functions_suite.jsonl");
    counts["functions_suite.jsonl"] = suite.test_count();
  } else if (domain == "colours") {
    const auto data = colours::gen_colours_dataset(seed);
    write_examples(data.train, out / "colours_train.jsonl");
    write_examples(data.test, out / "colours_test.jsonl");
    std::ofstream grammar(out / "colours_grammar.txt", std::ios::binary | std::ios::trunc);
    if (!grammar) throw IoError("cannot write colours_grammar.txt");
    grammar << colours::ColourGrammar::canonical().render() << '\n';
    counts["colours_train.jsonl"] = data.train.size();
    counts["colours_test.jsonl"] = data.test.size();
  } else if (domain == "fixture-translation") {
    const auto src = fixture_language_dir();
    if (!std::filesystem::is_directory(src)) throw IoError("fixture language not found at " + src.string());
    for (const auto& entry : std::filesystem::directory_iterator(src)) {
      if (!entry.is_regular_file()) continue;
      const auto name = entry.path().filename();
      std::filesystem::copy_file(entry.path(), out / name, std::filesystem::copy_options::overwrite_existing, ec);
      if (ec) throw IoError("cannot copy " + entry.path().string() + ": " + ec.message());
      if (entry.path().extension() == ".jsonl") counts[name.string()] = read_examples(entry.path()).size();
    }
  } else {
    throw ConfigError("gen-data domain must be functions, colours or fixture-translation");
  }
  return counts;
}

}  // namespace harness
