#pragma once

// Brute-force reference implementations, written independently of the
// production code paths and used only to check them.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace harness::oracles {

// chrF by explicit multiset matching of n-gram occurrences.
double chrf(const std::vector<std::pair<std::string, std::string>>& pairs, int max_n, double beta, bool corpus);

// 1 + (number of smaller values) + (ties - 1) / 2.
std::vector<double> ranks(const std::vector<double>& xs);

// Raw-sum Pearson in long double.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

// Two-sided t-test p-value of a correlation coefficient.
double correlation_p(double r, std::size_t n);

struct Correlation {
  double r = 0.0;
  double p = 1.0;
};

Correlation spearman(const std::vector<double>& xs, const std::vector<double>& ys);
// Fraction of all orderings of ys whose |rho| reaches the observed |rho|.
double spearman_permutation_p(const std::vector<double>& xs, const std::vector<double>& ys);
Correlation point_biserial(const std::vector<bool>& flags, const std::vector<double>& values);

// adjusted_i = min over every j ranked at or above i of m * p_j / rank_j.
std::vector<double> bh(const std::vector<double>& p);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};
// Compensated summation; sample standard deviation over sqrt(T).
MeanSe aggregate(const std::vector<double>& values);

// Recursive evaluation from the right end of the sentence. Nullopt for an
// unknown token or a repeat without a colour before it.
std::optional<std::vector<std::string>> interpret_colours(const std::vector<std::string>& tokens,
                                                          const std::map<std::string, std::string>& colours,
                                                          const std::map<std::string, int>& repeats);

std::size_t lcs(const std::string& a, const std::string& b);

struct CheckTally {
  std::string name;
  std::size_t cases = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  std::size_t errors = 0;  // exceptions or mismatched shapes

  bool passed() const { return cases > 0 && errors == 0 && max_deviation <= tolerance; }
};

// Randomized comparisons of the metrics module against the oracles above:
// chrF (segment and corpus), Spearman (rho, t p-value, permutation p),
// point-biserial (r, p), BH-FDR and trial aggregation.
std::vector<CheckTally> run_metric_checks(std::size_t cases, std::uint64_t seed);

}  // namespace harness::oracles
