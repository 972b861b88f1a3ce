#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "harness/core.hpp"

namespace harness::colours {

class UnknownToken : public Error {
 public:
  explicit UnknownToken(const std::string& token) : Error("unknown token: " + token) {}
};

class RepeatWithoutAntecedent : public Error {
 public:
  explicit RepeatWithoutAntecedent(const std::string& token)
      : Error("repeat token without a preceding colour: " + token) {}
};

class WordAbsent : public Error {
 public:
  explicit WordAbsent(const std::string& word) : Error("no example contains word: " + word) {}
};

class NoArrow : public Error {
 public:
  explicit NoArrow(const std::string& raw) : Error("hypothesis has no '->': " + raw) {}
};

class UnknownWord : public Error {
 public:
  explicit UnknownWord(const std::string& word) : Error("word not in grammar: " + word) {}
};

struct ColourRule {
  enum class Kind { colour, repeat };

  Kind kind = Kind::colour;
  std::string colour;  // Kind::colour
  int count = 0;       // Kind::repeat: total emissions, 2 or 3

  static ColourRule make_colour(std::string name);
  static ColourRule make_repeat(int count);
  // The verbal form used in grammar text ("blue", "repeat the last action twice").
  std::string describe() const;

  bool operator==(const ColourRule&) const = default;
};

class ColourGrammar {
 public:
  // The six-token grammar: lug, dax, wif, zup, bluf, walm.
  static ColourGrammar canonical();
  // Parses `word -> meaning` lines. Throws FormatError on malformed lines,
  // unrecognised meanings, duplicate words, or a word that is both kinds.
  static ColourGrammar parse(std::string_view text);
  static ColourGrammar load(const std::filesystem::path& file);

  const ColourRule* find(std::string_view token) const;
  const std::vector<std::pair<std::string, ColourRule>>& rules() const { return rules_; }
  std::vector<std::string> colour_tokens() const;
  std::vector<std::string> repeat_tokens() const;
  bool is_repeat(std::string_view token) const;
  // One `word -> meaning` line per rule.
  std::string render() const;

 private:
  std::vector<std::pair<std::string, ColourRule>> rules_;
};

using ColourSentence = std::vector<std::string>;

// Names the first invariant the sentence breaks, if any: a repeat token at
// position 0, a repeat directly after a repeat, or a colour token equal to
// the previous colour token.
std::optional<std::string> sentence_violation(const ColourSentence& sentence, const ColourGrammar& grammar);

// Left-to-right: a colour token emits its colour once; a repeat(count) token
// turns the preceding colour's emission into `count` copies.
std::string interpret_colours(const ColourSentence& sentence, const ColourGrammar& grammar);
std::string interpret_colours(std::string_view source, const ColourGrammar& grammar);

inline constexpr int kTrainSize = 800;
inline constexpr int kTestSize = 200;
inline constexpr std::size_t kMaxColourWords = 5;

// Probabilities of 1..5 colour words and of 0, 1, 2 repeat tokens.
inline constexpr double kLengthProbabilities[] = {0.4, 0.3, 0.15, 0.1, 0.05};
inline constexpr double kRepeatProbabilities[] = {0.8, 0.1, 0.1};

struct ColourSample {
  ColourSentence tokens;
  std::size_t colour_words = 0;
  // The repeat count as drawn, before capping at the number of colour words.
  std::size_t drawn_repeats = 0;
  std::size_t inserted_repeats = 0;
};

ColourSample sample_sentence(std::mt19937_64& rng, const ColourGrammar& grammar);

struct ColoursDataset {
  std::vector<Example> train;
  std::vector<Example> test;
};

// 800 train and 200 test pairs, sampled independently. With `dedup`, test
// sources never repeat and never occur in train.
ColoursDataset gen_colours_dataset(std::uint64_t seed, bool dedup = false);

// The five fixed in-context pairs covering every nonce word.
std::vector<Example> fixed_fewshot();

// Up to k distinct pool rows whose source contains `word` as a token,
// sampled uniformly without replacement and returned in pool order.
std::vector<Example> retrieve_word_examples(const std::string& word, const std::vector<Example>& pool, std::size_t k,
                                            std::uint64_t seed);

struct ColourMeaning {
  std::string text;
  // Set when the meaning is a bare colour name (lower-cased).
  std::optional<std::string> colour;
};

struct ColourHypothesis {
  std::string word;
  ColourMeaning meaning;
};

// Splits the first `word -> meaning` line (ASCII "->" or U+2192).
ColourHypothesis parse_colour_rule(std::string_view raw);

// Colour words need the exact gold colour. Repeat words are judged
// leniently: the meaning mentions "repeat" or the gold count's numeral.
bool eval_colour_hypothesis(const std::string& word, const ColourMeaning& meaning, const ColourGrammar& gold);

std::string assemble_colour_grammar_text(const std::vector<std::pair<std::string, std::string>>& rules);

// Scores a single-word hypothesis against in-context pairs. Output tokens
// are grouped into runs, one per colour token of the source; a colour
// hypothesis must match its runs' colour and a repeat hypothesis their
// length. The score is minus the mismatch rate, or minus infinity when the
// hypothesis cannot be read. `repeat_tokens` gives each token's lexical
// category, never its meaning.
double external_validate(const Hypothesis& h, const std::vector<Example>& in_context,
                         const std::set<std::string>& repeat_tokens);

}  // namespace harness::colours
