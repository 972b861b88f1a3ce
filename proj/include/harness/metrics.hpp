#pragma once

#include <string>
#include <utility>
#include <vector>

#include "harness/error.hpp"

namespace harness::metrics {

class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  explicit OutOfRange(double p) : Error("p-value out of [0, 1]: " + std::to_string(p)), value_(p) {}
  double value() const { return value_; }

 private:
  double value_;
};

enum class ChrfLevel { corpus, segment };

struct ChrfParams {
  int max_n = 6;
  double beta = 2.0;
  ChrfLevel level = ChrfLevel::corpus;
};

struct ChrfResult {
  // Corpus level: the pooled score. Segment level: mean of `segments`.
  double score = 0.0;
  // One entry per pair at segment level; empty at corpus level.
  std::vector<double> segments;
};

// (reference, hypothesis) pairs.
using TextPairs = std::vector<std::pair<std::string, std::string>>;

// Character n-gram F-score (plain chrF, no word n-grams). Whitespace is
// removed before n-gram extraction; characters are UTF-8 code points.
ChrfResult chrf(const TextPairs& pairs, const ChrfParams& params = {});
double chrf_corpus(const TextPairs& pairs, int max_n = 6, double beta = 2.0);
double chrf_segment(const std::string& reference, const std::string& hypothesis, int max_n = 6, double beta = 2.0);

struct CorrelationResult {
  double coefficient = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

enum class PValueMethod { t_approximation, exact_permutation };

// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& xs);

double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

// Two-sided p-value of a correlation coefficient r over n observations via
// t = r * sqrt((n - 2) / (1 - r^2)) against Student's t with n - 2 degrees
// of freedom. |r| = 1 gives 0.
double correlation_p_value(double r, std::size_t n);

// Exact permutation mode enumerates all n! orderings and is limited to n <= 8.
CorrelationResult spearman(const std::vector<double>& xs, const std::vector<double>& ys,
                           PValueMethod method = PValueMethod::t_approximation);

// Uses the population standard deviation of `values`.
CorrelationResult point_biserial(const std::vector<bool>& flags, const std::vector<double>& values);

// Benjamini-Hochberg step-up adjustment, returned in input order.
std::vector<double> bh_fdr(const std::vector<double>& p_values);

struct Aggregate {
  double mean = 0.0;
  double standard_error = 0.0;
};

// Standard error is the sample standard deviation over sqrt(t); 0 for t = 1.
Aggregate aggregate(const std::vector<double>& values);

double median(std::vector<double> values);

}  // namespace harness::metrics
