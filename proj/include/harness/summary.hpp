#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "harness/records.hpp"

namespace harness {

struct SummaryRow {
  std::string model_id;
  Domain domain = Domain::functions;
  std::string setting;
  std::size_t trials = 0;
  std::size_t records = 0;
  double accuracy = 0.0;
  double accuracy_se = 0.0;
  std::optional<double> median_squared_error;
  std::optional<double> corpus_chrf;
  std::size_t fallbacks = 0;
  std::size_t backend_errors = 0;
};

// Spearman correlation between true and hypothesised coefficients.
struct CoefficientRow {
  std::string model_id;
  std::string setting;
  std::string coefficient;  // slope or intercept
  std::size_t n = 0;
  std::optional<double> rho;
  std::optional<double> p_value;
};

// Point-biserial correlation between hypothesis correctness and the
// instance's mean few-shot accuracy, with BH-adjusted p-values per model.
struct HypothesisCorrelationRow {
  std::string model_id;
  Domain domain = Domain::functions;
  std::string setting;
  std::size_t n = 0;
  std::optional<double> r;
  std::optional<double> p_value;
  std::optional<double> p_adjusted;
};

struct VocabRow {
  std::string model_id;
  std::string direction;
  std::string setting;
  bool exclude_morphology = false;
  std::size_t judged = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct Summary {
  std::vector<SummaryRow> rows;
  std::vector<CoefficientRow> coefficients;
  std::vector<HypothesisCorrelationRow> hypothesis_correlations;
  std::vector<VocabRow> vocab;
};

// Pure function of the records. Accuracy is computed per trial over
// records without a backend error, unparsed answers counting as wrong, then
// aggregated across trials. Throws EmptyInput.
Summary summarize(const std::vector<ResultRecord>& records);

// All `*.jsonl` files of a directory, in name order. Throws EmptyInput when
// there are none.
std::vector<ResultRecord> load_record_dir(const std::filesystem::path& dir);

// summary.csv, plot_data.csv, coefficients.csv, hypothesis_correlations.csv
// and vocab_accuracy.csv.
void write_summary(const Summary& summary, const std::filesystem::path& out_dir);

}  // namespace harness
