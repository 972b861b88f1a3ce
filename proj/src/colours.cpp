#include "harness/colours.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace harness::colours {
namespace {

// The arrow between a word and its meaning, ASCII or U+2192.
struct ArrowSplit {
  std::string left;
  std::string right;
};

std::optional<ArrowSplit> split_arrow(std::string_view line) {
  static constexpr std::string_view kAscii = "->";
  static constexpr std::string_view kUnicode = "\xE2\x86\x92";
  const auto a = line.find(kAscii);
  const auto u = line.find(kUnicode);
  if (a == std::string_view::npos && u == std::string_view::npos) return std::nullopt;
  const bool ascii_first = u == std::string_view::npos || (a != std::string_view::npos && a < u);
  const auto pos = ascii_first ? a : u;
  const auto len = ascii_first ? kAscii.size() : kUnicode.size();
  return ArrowSplit{trim(line.substr(0, pos)), trim(line.substr(pos + len))};
}

bool is_alpha_word(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalpha(c); });
}

std::string strip_quotes(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c != '"' && c != '\'' && c != '`' && c != '*') out += c;
  }
  return out;
}

std::string strip_trailing_period(std::string s) {
  while (!s.empty() && (s.back() == '.' || s.back() == ' ')) s.pop_back();
  return s;
}

// Count named by a repeat meaning ("twice", "three times", "3"), if any.
std::optional<int> repeat_count(std::string_view meaning) {
  std::string cleaned;
  for (char c : to_lower(meaning)) cleaned += std::isalnum(static_cast<unsigned char>(c)) ? c : ' ';
  for (const auto& w : split_whitespace(cleaned)) {
    if (w == "twice" || w == "two" || w == "2" || w == "double") return 2;
    if (w == "thrice" || w == "three" || w == "3" || w == "triple") return 3;
  }
  return std::nullopt;
}

std::vector<std::string> lines_of(std::string_view text) {
  std::vector<std::string> out;
  std::string line;
  std::istringstream in{std::string(text)};
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

ColourRule ColourRule::make_colour(std::string name) {
  if (!is_alpha_word(name)) throw PreconditionViolation("colour name must be a single word: " + name);
  return ColourRule{Kind::colour, to_lower(name), 0};
}

ColourRule ColourRule::make_repeat(int count) {
  if (count != 2 && count != 3) throw PreconditionViolation("repeat count must be 2 or 3");
  return ColourRule{Kind::repeat, {}, count};
}

std::string ColourRule::describe() const {
  if (kind == Kind::colour) return colour;
  return count == 2 ? "repeat the last action twice" : "repeat the last action three times";
}

ColourGrammar ColourGrammar::canonical() {
  ColourGrammar g;
  g.rules_ = {{"lug", ColourRule::make_colour("blue")},  {"dax", ColourRule::make_colour("green")},
              {"wif", ColourRule::make_colour("red")},   {"zup", ColourRule::make_colour("yellow")},
              {"bluf", ColourRule::make_repeat(2)},      {"walm", ColourRule::make_repeat(3)}};
  return g;
}

ColourGrammar ColourGrammar::parse(std::string_view text) {
  ColourGrammar g;
  const auto lines = lines_of(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty()) continue;
    const auto split = split_arrow(line);
    if (!split) throw FormatError(i + 1, "missing '->'");
    const auto word = to_lower(split->left);
    if (!is_alpha_word(word)) throw FormatError(i + 1, "bad word: " + split->left);
    if (g.find(word)) throw FormatError(i + 1, "duplicate word: " + word);
    const auto meaning = strip_trailing_period(to_lower(split->right));
    ColourRule rule;
    if (is_alpha_word(meaning) && meaning != "repeat") {
      rule = ColourRule::make_colour(meaning);
    } else if (meaning.find("repeat") != std::string::npos && repeat_count(meaning)) {
      rule = ColourRule::make_repeat(*repeat_count(meaning));
    } else {
      throw FormatError(i + 1, "unrecognised meaning: " + split->right);
    }
    g.rules_.emplace_back(word, rule);
  }
  if (g.rules_.empty()) throw FormatError(0, "grammar has no rules");
  return g;
}

ColourGrammar ColourGrammar::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const ColourRule* ColourGrammar::find(std::string_view token) const {
  for (const auto& [word, rule] : rules_) {
    if (word == token) return &rule;
  }
  return nullptr;
}

std::vector<std::string> ColourGrammar::colour_tokens() const {
  std::vector<std::string> out;
  for (const auto& [word, rule] : rules_) {
    if (rule.kind == ColourRule::Kind::colour) out.push_back(word);
  }
  return out;
}

std::vector<std::string> ColourGrammar::repeat_tokens() const {
  std::vector<std::string> out;
  for (const auto& [word, rule] : rules_) {
    if (rule.kind == ColourRule::Kind::repeat) out.push_back(word);
  }
  return out;
}

bool ColourGrammar::is_repeat(std::string_view token) const {
  const auto* rule = find(token);
  return rule && rule->kind == ColourRule::Kind::repeat;
}

std::string ColourGrammar::render() const {
  std::vector<std::string> lines;
  for (const auto& [word, rule] : rules_) lines.push_back(word + " -> " + rule.describe());
  return join(lines, "\n");
}

std::optional<std::string> sentence_violation(const ColourSentence& sentence, const ColourGrammar& grammar) {
  const std::string* last_colour = nullptr;
  bool previous_was_repeat = false;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    const auto* rule = grammar.find(sentence[i]);
    if (!rule) throw UnknownToken(sentence[i]);
    if (rule->kind == ColourRule::Kind::repeat) {
      if (i == 0) return "repeat token at position 0";
      if (previous_was_repeat) return "repeat token after repeat token at position " + std::to_string(i);
      previous_was_repeat = true;
      continue;
    }
    if (last_colour && *last_colour == sentence[i]) {
      return "colour token repeats its predecessor at position " + std::to_string(i);
    }
    last_colour = &sentence[i];
    previous_was_repeat = false;
  }
  return std::nullopt;
}

std::string interpret_colours(const ColourSentence& sentence, const ColourGrammar& grammar) {
  // (colour, emission count) per colour token
  std::vector<std::pair<std::string, int>> emissions;
  bool previous_was_colour = false;
  for (const auto& token : sentence) {
    const auto* rule = grammar.find(token);
    if (!rule) throw UnknownToken(token);
    if (rule->kind == ColourRule::Kind::colour) {
      emissions.emplace_back(rule->colour, 1);
      previous_was_colour = true;
    } else {
      if (!previous_was_colour) throw RepeatWithoutAntecedent(token);
      emissions.back().second = rule->count;
      previous_was_colour = false;
    }
  }
  std::vector<std::string> out;
  for (const auto& [colour, count] : emissions) out.insert(out.end(), count, colour);
  return join(out, " ");
}

std::string interpret_colours(std::string_view source, const ColourGrammar& grammar) {
  return interpret_colours(split_whitespace(source), grammar);
}

ColourSample sample_sentence(std::mt19937_64& rng, const ColourGrammar& grammar) {
  const auto colours = grammar.colour_tokens();
  const auto repeats = grammar.repeat_tokens();
  if (colours.size() < 2 || repeats.empty()) throw PreconditionViolation("grammar needs two colours and a repeat");

  std::discrete_distribution<std::size_t> length_dist(std::begin(kLengthProbabilities), std::end(kLengthProbabilities));
  std::discrete_distribution<std::size_t> repeat_dist(std::begin(kRepeatProbabilities), std::end(kRepeatProbabilities));

  ColourSample sample;
  sample.colour_words = length_dist(rng) + 1;
  std::vector<std::string> words;
  for (std::size_t i = 0; i < sample.colour_words; ++i) {
    if (words.empty()) {
      words.push_back(colours[std::uniform_int_distribution<std::size_t>(0, colours.size() - 1)(rng)]);
      continue;
    }
    // Uniform over the colours other than the previous one.
    auto pick = std::uniform_int_distribution<std::size_t>(0, colours.size() - 2)(rng);
    const auto prev = std::find(colours.begin(), colours.end(), words.back()) - colours.begin();
    if (pick >= static_cast<std::size_t>(prev)) ++pick;
    words.push_back(colours[pick]);
  }

  sample.drawn_repeats = repeat_dist(rng);
  sample.inserted_repeats = std::min(sample.drawn_repeats, sample.colour_words);
  std::vector<std::size_t> positions(sample.colour_words);
  std::iota(positions.begin(), positions.end(), 0);
  std::shuffle(positions.begin(), positions.end(), rng);
  std::vector<bool> followed(sample.colour_words, false);
  for (std::size_t i = 0; i < sample.inserted_repeats; ++i) followed[positions[i]] = true;

  for (std::size_t i = 0; i < words.size(); ++i) {
    sample.tokens.push_back(words[i]);
    if (followed[i]) {
      sample.tokens.push_back(repeats[std::uniform_int_distribution<std::size_t>(0, repeats.size() - 1)(rng)]);
    }
  }
  return sample;
}

ColoursDataset gen_colours_dataset(std::uint64_t seed, bool dedup) {
  const auto grammar = ColourGrammar::canonical();
  std::mt19937_64 rng(seed);
  auto draw = [&] {
    const auto sample = sample_sentence(rng, grammar);
    return Example{join(sample.tokens, " "), interpret_colours(sample.tokens, grammar)};
  };
  ColoursDataset data;
  for (int i = 0; i < kTrainSize; ++i) data.train.push_back(draw());
  std::set<std::string> seen;
  if (dedup) {
    for (const auto& ex : data.train) seen.insert(ex.source);
  }
  while (data.test.size() < static_cast<std::size_t>(kTestSize)) {
    auto ex = draw();
    if (dedup && !seen.insert(ex.source).second) continue;
    data.test.push_back(std::move(ex));
  }
  return data;
}

std::vector<Example> fixed_fewshot() {
  return {{"lug dax", "blue green"},
          {"wif zup", "red yellow"},
          {"lug bluf", "blue blue"},
          {"wif walm", "red red red"},
          {"lug walm dax bluf", "blue blue blue green green"}};
}

std::vector<Example> retrieve_word_examples(const std::string& word, const std::vector<Example>& pool, std::size_t k,
                                            std::uint64_t seed) {
  std::vector<std::size_t> matching;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto tokens = split_whitespace(pool[i].source);
    if (std::find(tokens.begin(), tokens.end(), word) != tokens.end()) matching.push_back(i);
  }
  if (matching.empty()) throw WordAbsent(word);
  std::vector<std::size_t> chosen;
  std::mt19937_64 rng(seed);
  std::sample(matching.begin(), matching.end(), std::back_inserter(chosen), k, rng);
  std::vector<Example> out;
  for (auto i : chosen) out.push_back(pool[i]);
  return out;
}

ColourHypothesis parse_colour_rule(std::string_view raw) {
  for (const auto& line : lines_of(raw)) {
    const auto split = split_arrow(line);
    if (!split) continue;
    const auto left = split_whitespace(strip_quotes(split->left));
    if (left.empty()) continue;
    ColourHypothesis h;
    h.word = to_lower(left.back());
    h.meaning.text = strip_trailing_period(split->right);
    const auto bare = to_lower(strip_quotes(h.meaning.text));
    if (is_alpha_word(bare)) h.meaning.colour = bare;
    return h;
  }
  throw NoArrow(std::string(raw));
}

bool eval_colour_hypothesis(const std::string& word, const ColourMeaning& meaning, const ColourGrammar& gold) {
  const auto* rule = gold.find(word);
  if (!rule) throw UnknownWord(word);
  if (rule->kind == ColourRule::Kind::colour) return meaning.colour && to_lower(*meaning.colour) == rule->colour;
  return contains_ci(meaning.text, "repeat") || meaning.text.find(std::to_string(rule->count)) != std::string::npos;
}

std::string assemble_colour_grammar_text(const std::vector<std::pair<std::string, std::string>>& rules) {
  if (rules.empty()) throw PreconditionViolation("grammar text needs at least one rule");
  std::vector<std::string> lines;
  for (const auto& [word, meaning] : rules) lines.push_back(word + " -> " + meaning);
  return join(lines, "\n");
}

double external_validate(const Hypothesis& h, const std::vector<Example>& in_context,
                         const std::set<std::string>& repeat_tokens) {
  ColourHypothesis parsed;
  try {
    parsed = parse_colour_rule(h.raw);
  } catch (const NoArrow&) {
    return kMinusInfinity;
  }
  if (h.word && to_lower(*h.word) != parsed.word) return kMinusInfinity;
  std::optional<int> count;
  if (!parsed.meaning.colour || *parsed.meaning.colour == "repeat") {
    count = repeat_count(parsed.meaning.text);
    if (!count) return kMinusInfinity;
  }
  const bool word_is_repeat = repeat_tokens.contains(parsed.word);

  std::size_t occurrences = 0;
  std::size_t mismatches = 0;
  for (const auto& ex : in_context) {
    const auto source = split_whitespace(ex.source);
    const auto target = split_whitespace(to_lower(ex.target));
    std::vector<std::pair<std::string, int>> runs;
    for (const auto& t : target) {
      if (!runs.empty() && runs.back().first == t) {
        ++runs.back().second;
      } else {
        runs.emplace_back(t, 1);
      }
    }
    std::size_t colour_index = 0;
    std::size_t colour_count = 0;
    for (const auto& t : source) colour_count += repeat_tokens.contains(t) ? 0 : 1;
    const bool aligned = colour_count == runs.size();
    for (const auto& t : source) {
      const bool is_repeat = repeat_tokens.contains(t);
      if (t == parsed.word) {
        ++occurrences;
        bool ok = aligned && is_repeat == word_is_repeat;
        if (ok && !is_repeat) ok = !count && runs[colour_index].first == *parsed.meaning.colour;
        if (ok && is_repeat) ok = count && colour_index > 0 && runs[colour_index - 1].second == *count;
        if (!ok) ++mismatches;
      }
      if (!is_repeat) ++colour_index;
    }
  }
  if (occurrences == 0) return 0.0;
  return -static_cast<double>(mismatches) / static_cast<double>(occurrences);
}

}  // namespace harness::colours
