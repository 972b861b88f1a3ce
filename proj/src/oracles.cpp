#include "harness/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "harness/metrics.hpp"

namespace harness::oracles {
namespace {

std::vector<std::string> code_points(const std::string& text) {
  std::vector<std::string> out;
  for (char c : text) {
    const auto b = static_cast<unsigned char>(c);
    if ((b & 0xC0) == 0x80 && !out.empty()) {
      out.back() += c;
    } else {
      out.emplace_back(1, c);
    }
  }
  std::erase_if(out, [](const std::string& s) {
    return s == " " || s == "\t" || s == "\n" || s == "\r" || s == "\v" || s == "\f";
  });
  return out;
}

std::vector<std::string> grams(const std::vector<std::string>& chars, int n) {
  std::vector<std::string> out;
  for (int i = 0; i + n <= static_cast<int>(chars.size()); ++i) {
    std::string g;
    for (int k = 0; k < n; ++k) g += chars[i + k];
    out.push_back(g);
  }
  return out;
}

struct Tally {
  double matched = 0;
  double hyp = 0;
  double ref = 0;
};

Tally match_order(const std::string& ref, const std::string& hyp, int n) {
  const auto rg = grams(code_points(ref), n);
  const auto hg = grams(code_points(hyp), n);
  std::vector<bool> used(rg.size(), false);
  Tally t{0, static_cast<double>(hg.size()), static_cast<double>(rg.size())};
  for (const auto& g : hg) {
    for (std::size_t j = 0; j < rg.size(); ++j) {
      if (!used[j] && rg[j] == g) {
        used[j] = true;
        t.matched += 1;
        break;
      }
    }
  }
  return t;
}

double f_beta(const std::vector<Tally>& orders, double beta) {
  double p = 0, r = 0;
  int np = 0, nr = 0;
  for (const auto& t : orders) {
    if (t.hyp > 0) p += t.matched / t.hyp, ++np;
    if (t.ref > 0) r += t.matched / t.ref, ++nr;
  }
  p = np ? p / np : 0;
  r = nr ? r / nr : 0;
  if (p == 0 && r == 0) return 0;
  return 100 * (1 + beta * beta) * p * r / (beta * beta * p + r);
}

}  // namespace

double chrf(const std::vector<std::pair<std::string, std::string>>& pairs, int max_n, double beta, bool corpus) {
  if (corpus) {
    std::vector<Tally> pooled(max_n);
    for (const auto& [ref, hyp] : pairs) {
      for (int n = 1; n <= max_n; ++n) {
        const auto t = match_order(ref, hyp, n);
        pooled[n - 1].matched += t.matched;
        pooled[n - 1].hyp += t.hyp;
        pooled[n - 1].ref += t.ref;
      }
    }
    return f_beta(pooled, beta);
  }
  double total = 0;
  for (const auto& [ref, hyp] : pairs) {
    std::vector<Tally> orders;
    for (int n = 1; n <= max_n; ++n) orders.push_back(match_order(ref, hyp, n));
    total += f_beta(orders, beta);
  }
  return total / static_cast<double>(pairs.size());
}

std::vector<double> ranks(const std::vector<double>& xs) {
  std::vector<double> out;
  for (double x : xs) {
    double smaller = 0, equal = 0;
    for (double y : xs) {
      if (y < x) smaller += 1;
      if (y == x) equal += 1;
    }
    out.push_back(1 + smaller + (equal - 1) / 2);
  }
  return out;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  const long double n = xs.size();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += static_cast<long double>(xs[i]) * xs[i];
    syy += static_cast<long double>(ys[i]) * ys[i];
    sxy += static_cast<long double>(xs[i]) * ys[i];
  }
  const long double num = n * sxy - sx * sy;
  const long double den = std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  return static_cast<double>(std::clamp(num / den, -1.0L, 1.0L));
}

namespace {

double beta_fraction(double a, double b, double x) {
  const double tiny = 1e-300;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 1000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((a + m2 - 1) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double step = d * c;
    h *= step;
    if (std::abs(step - 1.0) < 1e-16) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1) / (a + b + 2)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double correlation_p(double r, std::size_t n) {
  if (std::abs(r) >= 1) return 0;
  const double df = static_cast<double>(n) - 2;
  // With t^2 = r^2 df / (1 - r^2), df / (df + t^2) reduces to 1 - r^2.
  return incomplete_beta(df / 2, 0.5, 1 - r * r);
}

Correlation spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double r = pearson(ranks(xs), ranks(ys));
  return {r, correlation_p(r, xs.size())};
}

double spearman_permutation_p(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto rx = ranks(xs);
  auto ry = ranks(ys);
  const double observed = std::abs(pearson(rx, ry));
  std::size_t hits = 0, total = 0;
  // Heap's algorithm.
  std::function<void(std::size_t)> visit = [&](std::size_t k) {
    if (k == 1) {
      ++total;
      if (std::abs(pearson(rx, ry)) >= observed - 1e-12) ++hits;
      return;
    }
    visit(k - 1);
    for (std::size_t i = 0; i + 1 < k; ++i) {
      std::swap(ry[k % 2 == 0 ? i : 0], ry[k - 1]);
      visit(k - 1);
    }
  };
  visit(ry.size());
  return static_cast<double>(hits) / static_cast<double>(total);
}

Correlation point_biserial(const std::vector<bool>& flags, const std::vector<double>& values) {
  std::vector<double> binary;
  for (bool f : flags) binary.push_back(f ? 1.0 : 0.0);
  const double r = pearson(binary, values);
  return {r, correlation_p(r, flags.size())};
}

std::vector<double> bh(const std::vector<double>& p) {
  const std::size_t m = p.size();
  // rank_i: 1 + number of entries ordered before i (ties keep input order).
  std::vector<std::size_t> rank(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t before = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (p[j] < p[i] || (p[j] == p[i] && j < i)) ++before;
    }
    rank[i] = before + 1;
  }
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = 1.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (rank[j] >= rank[i]) best = std::min(best, static_cast<double>(m) * p[j] / static_cast<double>(rank[j]));
    }
    out[i] = best;
  }
  return out;
}

MeanSe aggregate(const std::vector<double>& values) {
  auto kahan = [](const std::vector<double>& xs) {
    double sum = 0, carry = 0;
    for (double x : xs) {
      const double y = x - carry;
      const double t = sum + y;
      carry = (t - sum) - y;
      sum = t;
    }
    return sum;
  };
  const double t = static_cast<double>(values.size());
  const double mean = kahan(values) / t;
  if (values.size() < 2) return {mean, 0};
  std::vector<double> sq;
  for (double v : values) sq.push_back((v - mean) * (v - mean));
  return {mean, std::sqrt(kahan(sq) / (t - 1)) / std::sqrt(t)};
}

std::optional<std::vector<std::string>> interpret_colours(const std::vector<std::string>& tokens,
                                                          const std::map<std::string, std::string>& colours,
                                                          const std::map<std::string, int>& repeats) {
  if (tokens.empty()) return std::vector<std::string>{};
  const auto& last = tokens.back();
  if (const auto c = colours.find(last); c != colours.end()) {
    auto head = interpret_colours({tokens.begin(), tokens.end() - 1}, colours, repeats);
    if (!head) return std::nullopt;
    head->push_back(c->second);
    return head;
  }
  const auto r = repeats.find(last);
  if (r == repeats.end() || tokens.size() < 2) return std::nullopt;
  const auto c = colours.find(tokens[tokens.size() - 2]);
  if (c == colours.end()) return std::nullopt;
  auto head = interpret_colours({tokens.begin(), tokens.end() - 2}, colours, repeats);
  if (!head) return std::nullopt;
  for (int k = 0; k < r->second; ++k) head->push_back(c->second);
  return head;
}

std::size_t lcs(const std::string& a, const std::string& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size() || j == b.size()) return 0;
    const auto key = std::make_pair(i, j);
    if (const auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    memo[key] = v;
    return v;
  };
  return go(0, 0);
}

namespace {

void note(CheckTally& t, double a, double b) {
  const double dev = std::abs(a - b);
  if (std::isnan(dev)) {
    ++t.errors;
  } else {
    t.max_deviation = std::max(t.max_deviation, dev);
  }
}

template <typename F>
void guarded(CheckTally& t, F&& f) {
  ++t.cases;
  try {
    f();
  } catch (...) {
    ++t.errors;
  }
}

bool constant(const std::vector<double>& xs) {
  return std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); });
}

}  // namespace

std::vector<CheckTally> run_metric_checks(std::size_t cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  CheckTally chrf_segment{"chrF segment", 0, 0, 1e-9, 0};
  CheckTally chrf_corpus{"chrF corpus", 0, 0, 1e-9, 0};
  CheckTally rho{"Spearman rho", 0, 0, 1e-9, 0};
  CheckTally rho_p{"Spearman p (t)", 0, 0, 1e-9, 0};
  CheckTally rho_exact{"Spearman p (permutation)", 0, 0, 1e-9, 0};
  CheckTally pb{"point-biserial r", 0, 0, 1e-9, 0};
  CheckTally pb_p{"point-biserial p", 0, 0, 1e-9, 0};
  CheckTally fdr{"BH-FDR", 0, 0, 1e-9, 0};
  CheckTally agg{"aggregate", 0, 0, 1e-12, 0};

  const std::vector<std::string> alphabet = {"a", "b", "c", "d", " ", "é", "中", "ab"};
  auto random_text = [&] {
    std::string s;
    const int len = uniform_int(0, 18);
    for (int i = 0; i < len; ++i) s += alphabet[uniform_int(0, static_cast<int>(alphabet.size()) - 1)];
    return s;
  };

  for (std::size_t c = 0; c < cases; ++c) {
    metrics::TextPairs pairs;
    const int n_pairs = uniform_int(1, 5);
    for (int i = 0; i < n_pairs; ++i) pairs.emplace_back(random_text(), random_text());
    const int max_n = uniform_int(1, 6);
    const double beta = c % 3 == 0 ? uniform(0.5, 3.0) : 2.0;
    guarded(chrf_segment, [&] {
      note(chrf_segment, metrics::chrf(pairs, {max_n, beta, metrics::ChrfLevel::segment}).score,
           chrf(pairs, max_n, beta, false));
    });
    guarded(chrf_corpus, [&] {
      note(chrf_corpus, metrics::chrf(pairs, {max_n, beta, metrics::ChrfLevel::corpus}).score,
           chrf(pairs, max_n, beta, true));
    });

    {
      const int n = uniform_int(3, 14);
      std::vector<double> xs, ys;
      const bool ties = c % 2 == 0;
      do {
        xs.clear();
        ys.clear();
        for (int i = 0; i < n; ++i) {
          xs.push_back(ties ? uniform_int(0, 4) : uniform(-5, 5));
          ys.push_back(ties ? uniform_int(0, 4) : uniform(-5, 5));
        }
      } while (constant(xs) || constant(ys));
      guarded(rho, [&] {
        const auto got = metrics::spearman(xs, ys);
        const auto want = spearman(xs, ys);
        note(rho, got.coefficient, want.r);
        ++rho_p.cases;
        note(rho_p, got.p_value, want.p);
      });
      if (n <= 7) {
        guarded(rho_exact, [&] {
          note(rho_exact, metrics::spearman(xs, ys, metrics::PValueMethod::exact_permutation).p_value,
               spearman_permutation_p(xs, ys));
        });
      }
    }

    {
      const int n = uniform_int(3, 30);
      std::vector<bool> flags;
      std::vector<double> values;
      auto mixed = [&] {
        const auto ones = std::count(flags.begin(), flags.end(), true);
        return ones > 0 && ones < static_cast<long>(flags.size());
      };
      do {
        flags.clear();
        values.clear();
        for (int i = 0; i < n; ++i) {
          flags.push_back(uniform_int(0, 1) == 1);
          values.push_back(c % 2 ? uniform(0, 1) : uniform_int(0, 3) / 3.0);
        }
      } while (!mixed() || constant(values));
      guarded(pb, [&] {
        const auto got = metrics::point_biserial(flags, values);
        const auto want = point_biserial(flags, values);
        note(pb, got.coefficient, want.r);
        ++pb_p.cases;
        note(pb_p, got.p_value, want.p);
      });
    }

    {
      const int m = uniform_int(1, 30);
      std::vector<double> p;
      for (int i = 0; i < m; ++i) {
        const int kind = uniform_int(0, 9);
        p.push_back(kind == 0 ? 0.0 : kind == 1 ? 1.0 : kind == 2 && !p.empty() ? p.back() : uniform(0, 1));
      }
      guarded(fdr, [&] {
        const auto got = metrics::bh_fdr(p);
        const auto want = bh(p);
        if (got.size() != want.size()) {
          ++fdr.errors;
          return;
        }
        for (std::size_t i = 0; i < got.size(); ++i) note(fdr, got[i], want[i]);
      });
    }

    {
      const int t = uniform_int(1, 10);
      std::vector<double> acc;
      for (int i = 0; i < t; ++i) acc.push_back(uniform_int(0, 200) / 200.0);
      guarded(agg, [&] {
        const auto got = metrics::aggregate(acc);
        const auto want = aggregate(acc);
        note(agg, got.mean, want.mean);
        note(agg, got.standard_error, want.se);
      });
    }
  }
  return {chrf_segment, chrf_corpus, rho, rho_p, rho_exact, pb, pb_p, fdr, agg};
}

}  // namespace harness::oracles
