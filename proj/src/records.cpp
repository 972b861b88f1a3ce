#include "harness/records.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace harness {

using nlohmann::json;

namespace {

json score_to_json(double score) {
  if (is_minus_infinity(score)) return "-inf";
  return score;
}

double score_from_json(const json& j) {
  if (j.is_string() && j.get<std::string>() == "-inf") return kMinusInfinity;
  if (j.is_null()) return kMinusInfinity;
  return j.get<double>();
}

template <typename T>
json opt(const std::optional<T>& v) {
  if (!v) return nullptr;
  return *v;
}

template <typename T>
std::optional<T> get_opt(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

json hypothesis_to_json(const Hypothesis& h) {
  return json{{"raw", h.raw}, {"word", opt(h.word)}, {"parsed", opt(h.parsed)}};
}

Hypothesis hypothesis_from_json(const json& j) {
  return Hypothesis{j.at("raw").get<std::string>(), get_opt<std::string>(j, "word"),
                    get_opt<std::string>(j, "parsed")};
}

json candidates_to_json(const std::vector<ScoredHypothesis>& cs) {
  json arr = json::array();
  for (const auto& c : cs) arr.push_back(to_json(c));
  return arr;
}

std::vector<ScoredHypothesis> candidates_from_json(const json& j) {
  std::vector<ScoredHypothesis> out;
  for (const auto& c : j) out.push_back(scored_hypothesis_from_json(c));
  return out;
}

}  // namespace

json to_json(const ScoredHypothesis& s) {
  return json{{"hypothesis", hypothesis_to_json(s.hypothesis)},
              {"method", to_string(s.method)},
              {"score", score_to_json(s.score)}};
}

ScoredHypothesis scored_hypothesis_from_json(const json& j) {
  return ScoredHypothesis{hypothesis_from_json(j.at("hypothesis")),
                          parse_rerank_method(j.at("method").get<std::string>()), score_from_json(j.at("score"))};
}

json to_json(const ResultRecord& r) {
  json words = json::array();
  for (const auto& w : r.word_hypotheses) {
    words.push_back(json{{"word", w.word},
                         {"chosen", w.chosen ? to_json(*w.chosen) : json(nullptr)},
                         {"candidates", candidates_to_json(w.candidates)},
                         {"correct", opt(w.correct)},
                         {"correct_excluding_morphology", opt(w.correct_excluding_morphology)},
                         {"cached", w.cached}});
  }
  return json{{"schema", kRecordSchema},
              {"model_id", r.model_id},
              {"domain", to_string(r.domain)},
              {"instance_id", r.instance_id},
              {"setting", r.setting.name()},
              {"trial_index", r.trial_index},
              {"temperature", r.temperature},
              {"query", r.query},
              {"reference", r.reference},
              {"raw_output", r.raw_output},
              {"marked", r.marked},
              {"parsed_output", opt(r.parsed_output)},
              {"correct", opt(r.correct)},
              {"segment_chrf", opt(r.segment_chrf)},
              {"squared_error", opt(r.squared_error)},
              {"chosen_hypothesis", r.chosen_hypothesis ? to_json(*r.chosen_hypothesis) : json(nullptr)},
              {"candidates", candidates_to_json(r.candidates)},
              {"word_hypotheses", words},
              {"fallback_used", r.fallback_used},
              {"truth_rule", opt(r.truth_rule)},
              {"hypothesis_correct", opt(r.hypothesis_correct)},
              {"error", opt(r.error)}};
}

ResultRecord record_from_json(const json& j) {
  if (j.value("schema", 0) != kRecordSchema) {
    throw FormatError(0, "unsupported record schema " + j.value("schema", json(nullptr)).dump());
  }
  ResultRecord r;
  r.model_id = j.at("model_id").get<std::string>();
  r.domain = parse_domain(j.at("domain").get<std::string>());
  r.instance_id = j.at("instance_id").get<std::string>();
  r.setting = Setting::parse(j.at("setting").get<std::string>());
  r.trial_index = j.at("trial_index").get<int>();
  r.temperature = j.at("temperature").get<double>();
  r.query = j.at("query").get<std::string>();
  r.reference = j.at("reference").get<std::string>();
  r.raw_output = j.at("raw_output").get<std::string>();
  r.marked = j.at("marked").get<bool>();
  r.parsed_output = get_opt<std::string>(j, "parsed_output");
  r.correct = get_opt<bool>(j, "correct");
  r.segment_chrf = get_opt<double>(j, "segment_chrf");
  r.squared_error = get_opt<double>(j, "squared_error");
  if (!j.at("chosen_hypothesis").is_null()) r.chosen_hypothesis = scored_hypothesis_from_json(j.at("chosen_hypothesis"));
  r.candidates = candidates_from_json(j.at("candidates"));
  for (const auto& w : j.at("word_hypotheses")) {
    WordHypothesis wh;
    wh.word = w.at("word").get<std::string>();
    if (!w.at("chosen").is_null()) wh.chosen = scored_hypothesis_from_json(w.at("chosen"));
    wh.candidates = candidates_from_json(w.at("candidates"));
    wh.correct = get_opt<bool>(w, "correct");
    wh.correct_excluding_morphology = get_opt<bool>(w, "correct_excluding_morphology");
    wh.cached = w.value("cached", false);
    r.word_hypotheses.push_back(std::move(wh));
  }
  r.fallback_used = j.at("fallback_used").get<bool>();
  r.truth_rule = get_opt<std::string>(j, "truth_rule");
  r.hypothesis_correct = get_opt<bool>(j, "hypothesis_correct");
  r.error = get_opt<std::string>(j, "error");
  return r;
}

std::string serialize_record(const ResultRecord& r) { return to_json(r).dump(); }

std::vector<ResultRecord> read_records(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open records file " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string content = ss.str();

  std::vector<ResultRecord> out;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < content.size()) {
    const auto nl = content.find('\n', start);
    if (nl == std::string::npos) break;  // partial trailing line
    ++line_no;
    const auto line = std::string_view(content).substr(start, nl - start);
    start = nl + 1;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(line_no, e.what());
    }
    out.push_back(record_from_json(j));
  }
  return out;
}

}  // namespace harness
