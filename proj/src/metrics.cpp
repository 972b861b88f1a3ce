#include "harness/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

namespace harness::metrics {
namespace {

// Splits UTF-8 text into code points, dropping ASCII whitespace.
std::vector<std::string> characters(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) {
      len = 4;
    } else if (lead >= 0xE0) {
      len = 3;
    } else if (lead >= 0xC0) {
      len = 2;
    }
    len = std::min(len, text.size() - i);
    if (!(len == 1 && std::isspace(lead))) out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

using NgramCounts = std::map<std::string, int>;

NgramCounts ngrams(const std::vector<std::string>& chars, int n) {
  NgramCounts counts;
  if (static_cast<int>(chars.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= chars.size(); ++i) {
    std::string gram;
    for (int k = 0; k < n; ++k) gram += chars[i + k];
    ++counts[gram];
  }
  return counts;
}

struct NgramStats {
  double matches = 0;
  double hyp_total = 0;
  double ref_total = 0;
};

std::vector<NgramStats> pair_stats(const std::string& ref, const std::string& hyp, int max_n) {
  const auto rc = characters(ref);
  const auto hc = characters(hyp);
  std::vector<NgramStats> stats(max_n);
  for (int n = 1; n <= max_n; ++n) {
    const auto rg = ngrams(rc, n);
    const auto hg = ngrams(hc, n);
    auto& s = stats[n - 1];
    for (const auto& [gram, count] : hg) {
      s.hyp_total += count;
      if (auto it = rg.find(gram); it != rg.end()) s.matches += std::min(count, it->second);
    }
    for (const auto& [gram, count] : rg) s.ref_total += count;
  }
  return stats;
}

double f_score(const std::vector<NgramStats>& stats, double beta) {
  double p_sum = 0;
  double r_sum = 0;
  int p_count = 0;
  int r_count = 0;
  for (const auto& s : stats) {
    if (s.hyp_total > 0) {
      p_sum += s.matches / s.hyp_total;
      ++p_count;
    }
    if (s.ref_total > 0) {
      r_sum += s.matches / s.ref_total;
      ++r_count;
    }
  }
  const double p = p_count ? p_sum / p_count : 0.0;
  const double r = r_count ? r_sum / r_count : 0.0;
  if (p + r == 0.0) return 0.0;
  const double b2 = beta * beta;
  return 100.0 * (1 + b2) * p * r / (b2 * p + r);
}

void check_params(const ChrfParams& params) {
  if (params.max_n < 1) throw PreconditionViolation("chrF max_n must be >= 1");
  if (!(params.beta > 0)) throw PreconditionViolation("chrF beta must be > 0");
}

double mean(const std::vector<double>& xs) { return std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size(); }

// Coefficients within rounding of +-1 are exactly +-1.
double snap_unit(double r) {
  r = std::clamp(r, -1.0, 1.0);
  return 1.0 - std::abs(r) < 8 * std::numeric_limits<double>::epsilon() ? std::copysign(1.0, r) : r;
}

bool all_equal(const std::vector<double>& xs) {
  return std::adjacent_find(xs.begin(), xs.end(), std::not_equal_to<>()) == xs.end();
}

}  // namespace

ChrfResult chrf(const TextPairs& pairs, const ChrfParams& params) {
  check_params(params);
  if (pairs.empty()) throw EmptyInput("chrF needs at least one pair");
  ChrfResult result;
  if (params.level == ChrfLevel::corpus) {
    std::vector<NgramStats> pooled(params.max_n);
    for (const auto& [ref, hyp] : pairs) {
      const auto stats = pair_stats(ref, hyp, params.max_n);
      for (int n = 0; n < params.max_n; ++n) {
        pooled[n].matches += stats[n].matches;
        pooled[n].hyp_total += stats[n].hyp_total;
        pooled[n].ref_total += stats[n].ref_total;
      }
    }
    result.score = f_score(pooled, params.beta);
    return result;
  }
  for (const auto& [ref, hyp] : pairs) {
    result.segments.push_back(f_score(pair_stats(ref, hyp, params.max_n), params.beta));
  }
  result.score = mean(result.segments);
  return result;
}

double chrf_corpus(const TextPairs& pairs, int max_n, double beta) {
  return chrf(pairs, ChrfParams{max_n, beta, ChrfLevel::corpus}).score;
}

double chrf_segment(const std::string& reference, const std::string& hypothesis, int max_n, double beta) {
  return chrf({{reference, hypothesis}}, ChrfParams{max_n, beta, ChrfLevel::segment}).score;
}

std::vector<double> average_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.empty()) throw PreconditionViolation("pearson needs equal non-empty inputs");
  const double mx = mean(xs);
  const double my = mean(ys);
  double sxy = 0;
  double sxx = 0;
  double syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0 || syy == 0) throw DegenerateInput("pearson correlation of a constant vector");
  return snap_unit(sxy / std::sqrt(sxx * syy));
}

double correlation_p_value(double r, std::size_t n) {
  if (n < 3) throw PreconditionViolation("p-value needs n >= 3");
  if (std::abs(r) >= 1.0) return 0.0;
  const double df = static_cast<double>(n - 2);
  const double t = r * std::sqrt(df / (1.0 - r * r));
  const boost::math::students_t dist(df);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return std::clamp(p, 0.0, 1.0);
}

namespace {

double exact_permutation_p(const std::vector<double>& rx, const std::vector<double>& ry, double observed) {
  std::vector<std::size_t> perm(ry.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> permuted(ry.size());
  std::size_t extreme = 0;
  std::size_t total = 0;
  const double tol = 1e-12;
  do {
    for (std::size_t i = 0; i < perm.size(); ++i) permuted[i] = ry[perm[i]];
    const double r = pearson(rx, permuted);
    if (std::abs(r) >= std::abs(observed) - tol) ++extreme;
    ++total;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(extreme) / static_cast<double>(total);
}

}  // namespace

CorrelationResult spearman(const std::vector<double>& xs, const std::vector<double>& ys, PValueMethod method) {
  if (xs.size() != ys.size()) throw PreconditionViolation("spearman inputs differ in length");
  if (xs.size() < 3) throw PreconditionViolation("spearman needs at least 3 pairs");
  if (all_equal(xs) || all_equal(ys)) throw DegenerateInput("spearman input is constant");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double rho = pearson(rx, ry);
  CorrelationResult result{rho, 0.0, xs.size()};
  if (method == PValueMethod::exact_permutation) {
    if (xs.size() > 8) throw PreconditionViolation("exact permutation p-values are limited to n <= 8");
    result.p_value = exact_permutation_p(rx, ry, rho);
  } else {
    result.p_value = correlation_p_value(rho, xs.size());
  }
  return result;
}

CorrelationResult point_biserial(const std::vector<bool>& flags, const std::vector<double>& values) {
  if (flags.size() != values.size()) throw PreconditionViolation("point-biserial inputs differ in length");
  if (flags.size() < 3) throw PreconditionViolation("point-biserial needs at least 3 observations");
  const auto n1 = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
  const auto n0 = flags.size() - n1;
  if (n1 == 0 || n0 == 0) throw DegenerateInput("point-biserial needs both classes present");
  if (all_equal(values)) throw DegenerateInput("point-biserial values are constant");

  const double n = static_cast<double>(flags.size());
  double sum1 = 0;
  double sum0 = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) (flags[i] ? sum1 : sum0) += values[i];
  const double m1 = sum1 / static_cast<double>(n1);
  const double m0 = sum0 / static_cast<double>(n0);
  const double mu = mean(values);
  double ss = 0;
  for (double v : values) ss += (v - mu) * (v - mu);
  const double s = std::sqrt(ss / n);
  const double p = static_cast<double>(n1) / n;
  const double q = static_cast<double>(n0) / n;
  const double r = snap_unit((m1 - m0) / s * std::sqrt(p * q));
  return CorrelationResult{r, correlation_p_value(r, flags.size()), flags.size()};
}

std::vector<double> bh_fdr(const std::vector<double>& p_values) {
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw OutOfRange(p);
  }
  const std::size_t m = p_values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  std::vector<double> adjusted(m);
  double running = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    const double scaled = static_cast<double>(m) * p_values[order[k]] / static_cast<double>(k + 1);
    running = std::min(running, scaled);
    adjusted[order[k]] = std::min(1.0, running);
  }
  return adjusted;
}

Aggregate aggregate(const std::vector<double>& values) {
  if (values.empty()) throw PreconditionViolation("aggregate needs at least one value");
  const double mu = mean(values);
  if (values.size() == 1) return {mu, 0.0};
  double ss = 0;
  for (double v : values) ss += (v - mu) * (v - mu);
  const double t = static_cast<double>(values.size());
  const double sd = std::sqrt(ss / (t - 1));
  return {mu, sd / std::sqrt(t)};
}

double median(std::vector<double> values) {
  if (values.empty()) throw EmptyInput("median of no values");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

}  // namespace harness::metrics
