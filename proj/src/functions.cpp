#include "harness/functions.hpp"

#include <cctype>
#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace harness::functions {

using nlohmann::json;

namespace {

// Folds Unicode minus and dash variants into ASCII '-'.
std::string fold_minus(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto b = [&](std::size_t k) { return static_cast<unsigned char>(s[i + k]); };
    // U+2212 minus, U+2013 en dash, U+2014 em dash
    if (i + 2 < s.size() && b(0) == 0xE2 &&
        ((b(1) == 0x88 && b(2) == 0x92) || (b(1) == 0x80 && (b(2) == 0x93 || b(2) == 0x94)))) {
      out += '-';
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

Rational pow10(std::size_t k) {
  boost::multiprecision::cpp_int p = 1;
  for (std::size_t i = 0; i < k; ++i) p *= 10;
  return Rational(p);
}

class ExpressionParser {
 public:
  explicit ExpressionParser(std::string_view text) : s_(text) {}

  std::optional<ParsedLinear> parse() {
    ParsedLinear out{0, 0};
    bool first = true;
    skip_space();
    while (pos_ < s_.size()) {
      int sign = 1;
      bool saw_sign = false;
      while (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) {
        if (s_[pos_] == '-') sign = -sign;
        saw_sign = true;
        ++pos_;
        skip_space();
      }
      if (!first && !saw_sign) return std::nullopt;
      auto coeff = number();
      skip_space();
      bool has_x = false;
      int exponent = 0;
      if (pos_ < s_.size() && s_[pos_] == '*') {
        if (!coeff) return std::nullopt;
        ++pos_;
        skip_space();
      }
      if (pos_ < s_.size() && s_[pos_] == 'x') {
        has_x = true;
        exponent = 1;
        ++pos_;
        skip_space();
        if (pos_ < s_.size() && s_[pos_] == '^') {
          ++pos_;
          skip_space();
          if (pos_ >= s_.size() || (s_[pos_] != '0' && s_[pos_] != '1')) return std::nullopt;
          exponent = s_[pos_] - '0';
          ++pos_;
          if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) return std::nullopt;
          skip_space();
        }
      }
      if (!coeff && !has_x) return std::nullopt;
      const Rational value = coeff.value_or(Rational(1)) * sign;
      (exponent == 1 ? out.slope : out.intercept) += value;
      first = false;
    }
    if (first) return std::nullopt;
    return out;
  }

 private:
  void skip_space() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  std::optional<Rational> number() {
    const auto start = pos_;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    if (pos_ == start) return std::nullopt;
    if (pos_ + 1 < s_.size() && (s_[pos_] == '.' || s_[pos_] == '/') &&
        std::isdigit(static_cast<unsigned char>(s_[pos_ + 1]))) {
      ++pos_;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    return parse_number(s_.substr(start, pos_ - start));
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::optional<Rational> parse_number(std::string_view text) {
  const std::string t = trim(fold_minus(text));
  static const std::regex kInteger(R"(^([+-]?)(\d+)$)");
  static const std::regex kDecimal(R"(^([+-]?)(\d+)\.(\d+)$)");
  static const std::regex kFraction(R"(^([+-]?)(\d+)/(\d+)$)");
  std::smatch m;
  Rational value;
  if (std::regex_match(t, m, kInteger)) {
    value = Rational(boost::multiprecision::cpp_int(m[2].str()));
  } else if (std::regex_match(t, m, kDecimal)) {
    const auto digits = m[2].str() + m[3].str();
    value = Rational(boost::multiprecision::cpp_int(digits)) / pow10(m[3].length());
  } else if (std::regex_match(t, m, kFraction)) {
    const boost::multiprecision::cpp_int den(m[3].str());
    if (den == 0) return std::nullopt;
    value = Rational(boost::multiprecision::cpp_int(m[2].str()), den);
  } else {
    return std::nullopt;
  }
  if (m[1].str() == "-") value = -value;
  return value;
}

std::optional<Rational> extract_number(std::string_view answer) {
  const std::string t = fold_minus(answer);
  static const std::regex kNumber(R"([-+]?\d+(?:\.\d+|/\d+)?)");
  std::smatch m;
  if (!std::regex_search(t, m, kNumber)) return std::nullopt;
  return parse_number(m.str());
}

std::string format_rational(const Rational& r) {
  const auto num = boost::multiprecision::numerator(r);
  const auto den = boost::multiprecision::denominator(r);
  if (den == 1) return num.str();
  return num.str() + "/" + den.str();
}

std::optional<ParsedLinear> parse_linear_hypothesis(std::string_view raw) {
  std::string text = to_lower(fold_minus(raw));
  if (const auto pos = text.rfind("output:"); pos != std::string::npos) text = text.substr(pos + 7);

  std::string line;
  std::istringstream lines(text);
  while (std::getline(lines, line)) {
    if (!trim(line).empty()) break;
  }
  line = trim(line);
  if (line.empty()) return std::nullopt;

  static const std::regex kLhs(R"((?:f\s*\(\s*x\s*\)|\by)\s*=)");
  std::smatch m;
  std::string expr = line;
  if (std::regex_search(line, m, kLhs)) expr = m.suffix().str();
  expr = trim(expr);
  while (!expr.empty() && expr.back() == '.') expr = trim(expr.substr(0, expr.size() - 1));
  if (expr.empty()) return std::nullopt;
  return ExpressionParser(expr).parse();
}

Rational apply_linear(const LinearFunction& f, const Rational& x) { return Rational(f.slope) * x + f.intercept; }

Rational apply_linear(const ParsedLinear& f, const Rational& x) { return f.slope * x + f.intercept; }

ParsedLinear to_parsed(const LinearFunction& f) { return ParsedLinear{Rational(f.slope), Rational(f.intercept)}; }

std::string render_linear(const ParsedLinear& f) {
  std::string out = "y = " + format_rational(f.slope) + "x ";
  if (f.intercept < 0) {
    out += "- " + format_rational(-f.intercept);
  } else {
    out += "+ " + format_rational(f.intercept);
  }
  return out;
}

std::string render_linear(const LinearFunction& f) { return render_linear(to_parsed(f)); }

Rational mean_squared_error(const ParsedLinear& f, const std::vector<Example>& in_context) {
  if (in_context.empty()) throw PreconditionViolation("external validation needs in-context examples");
  Rational total = 0;
  for (const auto& ex : in_context) {
    const auto x = parse_number(ex.source);
    const auto y = parse_number(ex.target);
    if (!x || !y) throw NonNumericExample("non-numeric example (" + ex.source + ", " + ex.target + ")");
    const Rational residual = apply_linear(f, *x) - *y;
    total += residual * residual;
  }
  return total / static_cast<long>(in_context.size());
}

double external_validate(const Hypothesis& h, const std::vector<Example>& in_context) {
  if (in_context.empty()) throw PreconditionViolation("external validation needs in-context examples");
  for (const auto& ex : in_context) {
    if (!parse_number(ex.source) || !parse_number(ex.target)) {
      throw NonNumericExample("non-numeric example (" + ex.source + ", " + ex.target + ")");
    }
  }
  const auto parsed = parse_linear_hypothesis(h.raw);
  if (!parsed) return kMinusInfinity;
  const auto mse = mean_squared_error(*parsed, in_context);
  return -mse.convert_to<double>();
}

std::size_t FunctionSuite::test_count() const {
  std::size_t n = 0;
  for (const auto& f : functions) n += f.tests.size();
  return n;
}

std::vector<TaskInstance> FunctionSuite::instances() const {
  std::vector<TaskInstance> out;
  for (const auto& f : functions) out.insert(out.end(), f.tests.begin(), f.tests.end());
  return out;
}

std::map<std::string, LinearFunction> FunctionSuite::truth() const {
  std::map<std::string, LinearFunction> out;
  for (const auto& f : functions) {
    for (const auto& t : f.tests) out[t.id] = f.function;
  }
  return out;
}

namespace {

std::string instance_id(int function_index, int test_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fn%02d-%d", function_index, test_index);
  return buf;
}

Example make_example(const LinearFunction& f, int x) {
  return Example{std::to_string(x), format_rational(apply_linear(f, Rational(x)))};
}

}  // namespace

FunctionSuite gen_function_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> grid(kCoefficientMin, kCoefficientMax);
  FunctionSuite suite;
  suite.seed = seed;
  std::set<std::pair<int, int>> drawn;
  for (int fi = 0; fi < kFunctionCount; ++fi) {
    FunctionTests entry;
    do {
      entry.function.slope = grid(rng);
      entry.function.intercept = grid(rng);
    } while (!drawn.emplace(entry.function.slope, entry.function.intercept).second);
    for (int ti = 0; ti < kTestsPerFunction; ++ti) {
      TaskInstance inst;
      inst.id = instance_id(fi, ti);
      inst.domain = Domain::functions;
      std::set<int> used;
      for (int k = 0; k < kInContextCount; ++k) {
        int x = grid(rng);
        while (used.contains(x)) x = grid(rng);
        used.insert(x);
        inst.in_context.push_back(make_example(entry.function, x));
      }
      int query = grid(rng);
      while (used.contains(query)) query = grid(rng);
      inst.query = make_example(entry.function, query);
      entry.tests.push_back(std::move(inst));
    }
    suite.functions.push_back(std::move(entry));
  }
  return suite;
}

FunctionsReport eval_functions(const std::vector<ResultRecord>& records,
                               const std::map<std::string, LinearFunction>& truth) {
  if (records.empty()) throw EmptyInput("eval_functions needs records");
  FunctionsReport report;
  report.records = records.size();
  std::size_t correct = 0;
  std::vector<double> squared_errors;
  std::vector<double> true_slopes;
  std::vector<double> hyp_slopes;
  std::vector<double> true_intercepts;
  std::vector<double> hyp_intercepts;
  for (const auto& r : records) {
    const auto it = truth.find(r.instance_id);
    if (it == truth.end()) throw PreconditionViolation("no ground truth for instance " + r.instance_id);
    const auto x = parse_number(r.query);
    if (!x) throw NonNumericExample("non-numeric query " + r.query);
    const Rational expected = apply_linear(it->second, *x);
    if (r.parsed_output) {
      const auto predicted = parse_number(*r.parsed_output);
      if (!predicted) throw PreconditionViolation("parsed output is not numeric: " + *r.parsed_output);
      ++report.parseable_outputs;
      if (*predicted == expected) ++correct;
      const Rational residual = *predicted - expected;
      squared_errors.push_back((residual * residual).convert_to<double>());
    }
    if (r.chosen_hypothesis) {
      if (const auto h = parse_linear_hypothesis(r.chosen_hypothesis->hypothesis.raw)) {
        ++report.parseable_hypotheses;
        true_slopes.push_back(it->second.slope);
        true_intercepts.push_back(it->second.intercept);
        hyp_slopes.push_back(h->slope.convert_to<double>());
        hyp_intercepts.push_back(h->intercept.convert_to<double>());
      }
    }
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
  if (!squared_errors.empty()) report.median_squared_error = metrics::median(squared_errors);
  auto try_spearman = [](const std::vector<double>& a, const std::vector<double>& b) -> std::optional<metrics::CorrelationResult> {
    if (a.size() < 3) return std::nullopt;
    try {
      return metrics::spearman(a, b);
    } catch (const metrics::DegenerateInput&) {
      return std::nullopt;
    }
  };
  report.slope_correlation = try_spearman(true_slopes, hyp_slopes);
  report.intercept_correlation = try_spearman(true_intercepts, hyp_intercepts);
  return report;
}

void write_suite(const FunctionSuite& suite, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  for (const auto& f : suite.functions) {
    for (const auto& t : f.tests) {
      json pairs = json::array();
      for (const auto& ex : t.in_context) pairs.push_back(json::array({std::stoi(ex.source), std::stoi(ex.target)}));
      out << json{{"id", t.id},
                  {"slope", f.function.slope},
                  {"intercept", f.function.intercept},
                  {"in_context", pairs},
                  {"query_x", std::stoi(t.query.source)},
                  {"query_y", std::stoi(t.query.target)}}
                 .dump()
          << '\n';
    }
  }
  if (!out) throw IoError("short write to " + file.string());
}

FunctionSuite read_suite(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  FunctionSuite suite;
  std::map<std::string, std::size_t> index_of_function;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      TaskInstance inst;
      inst.id = j.at("id").get<std::string>();
      inst.domain = Domain::functions;
      for (const auto& p : j.at("in_context")) {
        inst.in_context.push_back(Example{std::to_string(p.at(0).get<long>()), std::to_string(p.at(1).get<long>())});
      }
      inst.query = Example{std::to_string(j.at("query_x").get<long>()), std::to_string(j.at("query_y").get<long>())};
      const LinearFunction f{j.at("slope").get<int>(), j.at("intercept").get<int>()};
      const auto group = inst.id.substr(0, inst.id.find('-'));
      auto [it, inserted] = index_of_function.try_emplace(group, suite.functions.size());
      if (inserted) suite.functions.push_back(FunctionTests{f, {}});
      if (!(suite.functions[it->second].function == f)) throw FormatError(line_no, "inconsistent function for " + group);
      validate(inst);
      suite.functions[it->second].tests.push_back(std::move(inst));
    } catch (const json::exception& e) {
      throw FormatError(line_no, e.what());
    } catch (const PreconditionViolation& e) {
      throw FormatError(line_no, e.what());
    }
  }
  return suite;
}

}  // namespace harness::functions
