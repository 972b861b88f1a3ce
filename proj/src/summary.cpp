#include "harness/summary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "harness/functions.hpp"
#include "harness/metrics.hpp"

namespace harness {
namespace {

using GroupKey = std::tuple<std::string, Domain, std::string>;

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string num(double v) {
  std::ostringstream out;
  out.precision(10);
  out << v;
  return out.str();
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : ""; }

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& file, const std::vector<std::string>& header)
      : out_(file, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + file.string());
    row(header);
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << csv_field(fields[i]);
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

bool is_induced(const std::string& setting) { return setting.starts_with("instruction_inference"); }

std::optional<functions::LinearFunction> truth_function(const ResultRecord& r) {
  if (!r.truth_rule) return std::nullopt;
  const auto parsed = functions::parse_linear_hypothesis(*r.truth_rule);
  if (!parsed) return std::nullopt;
  const auto& s = parsed->slope;
  const auto& b = parsed->intercept;
  if (denominator(s) != 1 || denominator(b) != 1) return std::nullopt;
  return functions::LinearFunction{numerator(s).convert_to<int>(), numerator(b).convert_to<int>()};
}

}  // namespace

Summary summarize(const std::vector<ResultRecord>& records) {
  if (records.empty()) throw EmptyInput("no records to summarize");
  std::map<GroupKey, std::vector<const ResultRecord*>> groups;
  for (const auto& r : records) groups[{r.model_id, r.domain, r.setting.name()}].push_back(&r);

  Summary summary;
  for (const auto& [key, group] : groups) {
    const auto& [model, domain, setting] = key;
    SummaryRow row;
    row.model_id = model;
    row.domain = domain;
    row.setting = setting;
    row.records = group.size();
    std::map<int, std::pair<std::size_t, std::size_t>> per_trial;  // correct, judged
    std::vector<double> squared_errors;
    metrics::TextPairs pairs;
    for (const auto* r : group) {
      if (r->fallback_used) ++row.fallbacks;
      if (r->error) {
        ++row.backend_errors;
        continue;
      }
      auto& [correct, judged] = per_trial[r->trial_index];
      ++judged;
      if (r->correct.value_or(false)) ++correct;
      if (r->squared_error) squared_errors.push_back(*r->squared_error);
      pairs.emplace_back(r->reference, r->parsed_output.value_or(""));
    }
    std::vector<double> accuracies;
    for (const auto& [trial, counts] : per_trial) {
      accuracies.push_back(static_cast<double>(counts.first) / static_cast<double>(counts.second));
    }
    row.trials = accuracies.size();
    if (!accuracies.empty()) {
      const auto agg = metrics::aggregate(accuracies);
      row.accuracy = agg.mean;
      row.accuracy_se = agg.standard_error;
    }
    if (domain == Domain::functions && !squared_errors.empty()) row.median_squared_error = metrics::median(squared_errors);
    if (domain != Domain::functions && !pairs.empty()) row.corpus_chrf = metrics::chrf_corpus(pairs);
    summary.rows.push_back(row);

    if (domain == Domain::functions && is_induced(setting)) {
      std::vector<ResultRecord> usable;
      std::map<std::string, functions::LinearFunction> truth;
      for (const auto* r : group) {
        const auto f = truth_function(*r);
        if (r->error || !f) continue;
        truth[r->instance_id] = *f;
        usable.push_back(*r);
      }
      if (!usable.empty()) {
        const auto report = functions::eval_functions(usable, truth);
        const auto n = report.parseable_hypotheses;
        auto add = [&](const char* name, const std::optional<metrics::CorrelationResult>& c) {
          CoefficientRow cr{model, setting, name, n, std::nullopt, std::nullopt};
          if (c) {
            cr.rho = c->coefficient;
            cr.p_value = c->p_value;
          }
          summary.coefficients.push_back(cr);
        };
        add("slope", report.slope_correlation);
        add("intercept", report.intercept_correlation);
      }
    }

    if (domain == Domain::translation && is_induced(setting)) {
      std::map<std::string, std::map<std::string, const WordHypothesis*>> by_direction;
      for (const auto* r : group) {
        if (r->error) continue;
        const auto direction = r->instance_id.substr(0, r->instance_id.find('-'));
        for (const auto& wh : r->word_hypotheses) by_direction[direction].emplace(wh.word, &wh);
      }
      for (const auto& [direction, words] : by_direction) {
        for (bool exclude : {false, true}) {
          VocabRow vr;
          vr.model_id = model;
          vr.direction = direction;
          vr.setting = setting;
          vr.exclude_morphology = exclude;
          for (const auto& [word, wh] : words) {
            const auto& verdict = exclude ? wh->correct_excluding_morphology : wh->correct;
            if (!verdict) continue;
            ++vr.judged;
            if (*verdict) ++vr.correct;
          }
          vr.accuracy = vr.judged ? static_cast<double>(vr.correct) / static_cast<double>(vr.judged) : 0.0;
          summary.vocab.push_back(vr);
        }
      }
    }
  }

  // Few-shot success per instance, then hypothesis correctness against it.
  std::map<std::pair<std::string, Domain>, std::map<std::string, std::pair<double, double>>> few_shot;
  for (const auto& r : records) {
    if (r.error || r.setting.kind() != SettingKind::few_shot) continue;
    auto& [hits, total] = few_shot[{r.model_id, r.domain}][r.instance_id];
    total += 1;
    if (r.correct.value_or(false)) hits += 1;
  }
  for (const auto& [key, group] : groups) {
    const auto& [model, domain, setting] = key;
    if (!is_induced(setting)) continue;
    const auto fs = few_shot.find({model, domain});
    if (fs == few_shot.end()) continue;
    std::vector<bool> flags;
    std::vector<double> values;
    for (const auto* r : group) {
      if (r->error || !r->hypothesis_correct) continue;
      const auto it = fs->second.find(r->instance_id);
      if (it == fs->second.end()) continue;
      flags.push_back(*r->hypothesis_correct);
      values.push_back(it->second.first / it->second.second);
    }
    HypothesisCorrelationRow row;
    row.model_id = model;
    row.domain = domain;
    row.setting = setting;
    row.n = flags.size();
    try {
      const auto c = metrics::point_biserial(flags, values);
      row.r = c.coefficient;
      row.p_value = c.p_value;
    } catch (const Error&) {
    }
    summary.hypothesis_correlations.push_back(row);
  }
  std::map<std::string, std::vector<std::size_t>> by_model;
  for (std::size_t i = 0; i < summary.hypothesis_correlations.size(); ++i) {
    if (summary.hypothesis_correlations[i].p_value) by_model[summary.hypothesis_correlations[i].model_id].push_back(i);
  }
  for (const auto& [model, idx] : by_model) {
    std::vector<double> ps;
    for (auto i : idx) ps.push_back(*summary.hypothesis_correlations[i].p_value);
    const auto adjusted = metrics::bh_fdr(ps);
    for (std::size_t k = 0; k < idx.size(); ++k) summary.hypothesis_correlations[idx[k]].p_adjusted = adjusted[k];
  }
  return summary;
}

std::vector<ResultRecord> load_record_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  if (files.empty()) throw EmptyInput("no record files in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<ResultRecord> out;
  for (const auto& f : files) {
    auto rs = read_records(f);
    out.insert(out.end(), std::make_move_iterator(rs.begin()), std::make_move_iterator(rs.end()));
  }
  return out;
}

void write_summary(const Summary& summary, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  CsvWriter rows(out_dir / "summary.csv", {"model", "domain", "setting", "trials", "records", "accuracy",
                                           "accuracy_se", "median_squared_error", "corpus_chrf", "fallbacks",
                                           "backend_errors"});
  CsvWriter plot(out_dir / "plot_data.csv", {"model", "domain", "setting", "metric", "value", "error"});
  for (const auto& r : summary.rows) {
    rows.row({r.model_id, to_string(r.domain), r.setting, std::to_string(r.trials), std::to_string(r.records),
              num(r.accuracy), num(r.accuracy_se), num(r.median_squared_error), num(r.corpus_chrf),
              std::to_string(r.fallbacks), std::to_string(r.backend_errors)});
    plot.row({r.model_id, to_string(r.domain), r.setting, "accuracy", num(r.accuracy), num(r.accuracy_se)});
    if (r.corpus_chrf) plot.row({r.model_id, to_string(r.domain), r.setting, "chrf", num(*r.corpus_chrf), ""});
  }
  CsvWriter coef(out_dir / "coefficients.csv", {"model", "setting", "coefficient", "n", "rho", "p_value"});
  for (const auto& c : summary.coefficients) {
    coef.row({c.model_id, c.setting, c.coefficient, std::to_string(c.n), num(c.rho), num(c.p_value)});
  }
  CsvWriter hyp(out_dir / "hypothesis_correlations.csv",
                {"model", "domain", "setting", "n", "r", "p_value", "p_adjusted"});
  for (const auto& h : summary.hypothesis_correlations) {
    hyp.row({h.model_id, to_string(h.domain), h.setting, std::to_string(h.n), num(h.r), num(h.p_value),
             num(h.p_adjusted)});
  }
  CsvWriter vocab(out_dir / "vocab_accuracy.csv",
                  {"model", "direction", "setting", "exclude_morphology", "judged", "correct", "accuracy"});
  for (const auto& v : summary.vocab) {
    vocab.row({v.model_id, v.direction, v.setting, v.exclude_morphology ? "yes" : "no", std::to_string(v.judged),
               std::to_string(v.correct), num(v.accuracy)});
  }
}

}  // namespace harness
