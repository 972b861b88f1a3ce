#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "harness/core.hpp"
#include "harness/prompt_template.hpp"

namespace harness::translation {

class MissingComponent : public Error {
 public:
  explicit MissingComponent(const std::string& what) : Error("missing prompt component: " + what) {}
};

// ek: English to the studied language; ke: the reverse.
enum class Direction { ek, ke };

std::string to_string(Direction d);
Direction parse_direction(std::string_view text);

struct ParallelCorpus {
  Direction direction = Direction::ek;
  std::vector<Example> rows;
  std::vector<Example> test;
};

// Source word to its listed translations. Affix markers (`*`, `-`) are kept.
class Wordlist {
 public:
  // CSV `word,translation`, one translation per row; a header row
  // `word,translation` is skipped. Throws FormatError.
  static Wordlist load_csv(const std::filesystem::path& file);
  static Wordlist parse_csv(std::string_view text);

  void add(const std::string& word, const std::string& translation);
  const std::vector<std::string>* find(std::string_view word) const;
  const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  // Translation to word. Markers are stripped from the new keys.
  Wordlist inverted() const;

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

bool has_affix_marker(std::string_view translation);
std::string strip_affix_markers(std::string_view translation);

inline constexpr std::string_view kUnsure = "Unsure";
inline constexpr std::string_view kSketchStart = "=== Start of grammar sketch ===";
inline constexpr std::string_view kSketchEnd = "=== End of grammar sketch ===";

// One typological question. Features sharing a (category, slot) are
// answered by the same item of the sketch line.
struct FeatureSpec {
  std::string id;
  std::string category;
  std::size_t slot = 0;
  std::string question;
  std::vector<std::string> domain;
};

struct GrammarFeature {
  FeatureSpec spec;
  std::string gold;
};

std::vector<FeatureSpec> load_feature_specs(const std::filesystem::path& file);
std::vector<FeatureSpec> parse_feature_specs(std::string_view json_text);

// Reads `Category: item; item` lines between the sketch delimiters. Items
// are split on ';' when the line has one, else on ',' unless the category
// has a single slot. Items starting with "Unsure" map to Unsure; missing
// items map to Unsure. Throws FormatError.
std::map<std::string, std::string> parse_sketch(std::string_view text, const std::vector<FeatureSpec>& specs);

// Every gold answer must be in its feature's domain.
std::vector<GrammarFeature> gold_features(const std::vector<FeatureSpec>& specs, std::string_view sketch_text);

// Inverse of parse_sketch, delimiters included.
std::string render_sketch(const std::vector<FeatureSpec>& specs, const std::map<std::string, std::string>& answers);

// Fraction of gold features answered exactly; Unsure and missing answers
// are wrong.
double eval_grammar_sketch(const std::map<std::string, std::string>& predicted,
                           const std::vector<GrammarFeature>& gold);

struct LanguageInfo {
  std::string name;
  std::string description;
};

// A language directory: train.ek.jsonl, test.ek.jsonl, test.ke.jsonl,
// optional train.ke.jsonl, wordlist.csv (English to the language),
// sketch.txt, features.json and language.json.
struct TranslationData {
  LanguageInfo language;
  ParallelCorpus ek;
  ParallelCorpus ke;
  Wordlist wordlist;
  std::string sketch_text;
  std::vector<GrammarFeature> sketch;

  const ParallelCorpus& corpus(Direction d) const { return d == Direction::ek ? ek : ke; }
  // The wordlist keyed by the direction's source language.
  Wordlist wordlist_for(Direction d) const { return d == Direction::ek ? wordlist : wordlist.inverted(); }
  std::string source_language(Direction d) const { return d == Direction::ek ? "English" : language.name; }
  std::string target_language(Direction d) const { return d == Direction::ek ? language.name : "English"; }
};

// Without train.ke.jsonl the ke training rows are the ek rows reversed.
TranslationData load_corpus(const std::filesystem::path& dir);

// Lower-cased words of a sentence, punctuation removed, first occurrences
// in order.
std::vector<std::string> query_words(std::string_view sentence);

std::size_t lcs_length(std::string_view a, std::string_view b);
std::size_t longest_common_substring(std::string_view a, std::string_view b);

// Top n rows by character LCS between `word` and the row source, both
// case-folded; ties keep corpus order.
std::vector<Example> retrieve_refs(const std::string& word, const std::vector<Example>& rows, std::size_t n = 2);

// Entry maximising the longest common substring with `word`; ties go to the
// lexicographically smallest entry.
std::pair<std::string, std::vector<std::string>> retrieve_wordlist_entry(const std::string& word, const Wordlist& wl);

// Up to k rows whose source contains `word` as a word, in corpus order;
// the two best LCS references when none does.
std::vector<Example> vocab_examples(const std::string& word, const std::vector<Example>& rows, std::size_t k = 5);

// The translation in a `word -> translation` reply, or nullopt.
std::optional<std::string> parse_vocab_hypothesis(std::string_view raw);

// Minus the fraction of example targets lacking the hypothesised
// translation (case-folded, affix markers stripped); minus infinity when
// the hypothesis does not parse.
double external_validate(const Hypothesis& h, const std::vector<Example>& examples);

// At most one hypothesis per (direction, word). Lookups and inductions for
// one key are serialised; different keys proceed in parallel.
class VocabHypothesisCache {
 public:
  struct Entry {
    ScoredHypothesis chosen;
    std::vector<ScoredHypothesis> candidates;
  };

  std::optional<Entry> get(Direction d, const std::string& word) const;
  // Runs `induce` unless the key is populated; stores its result when it
  // has one. `cached` reports a hit.
  std::optional<Entry> get_or_induce(Direction d, const std::string& word,
                                     const std::function<std::optional<Entry>()>& induce, bool* cached = nullptr);
  std::size_t size() const;

 private:
  std::mutex& key_mutex(const std::string& key);

  mutable std::mutex mu_;
  std::map<std::string, Entry> entries_;
  std::map<std::string, std::unique_ptr<std::mutex>> key_mutexes_;
};

struct VocabInduction {
  std::optional<ScoredHypothesis> chosen;
  std::vector<ScoredHypothesis> candidates;
  bool cached = false;
};

// Produces scored candidates for a word given its example sentences.
using CandidateSource = std::function<std::vector<ScoredHypothesis>(const std::string& word,
                                                                   const std::vector<Example>& examples)>;

// Cache hit: the stored winner, no call. Miss: sample, rerank and cache the
// winner when one exists; otherwise the null marker (chosen unset).
VocabInduction induce_vocab(const std::string& word, Direction d, const std::vector<Example>& rows,
                            VocabHypothesisCache& cache, const CandidateSource& sample);

// Maps a reply onto the feature's domain, or Unsure. The text after
// "Answer:" is used when present.
std::string parse_feature_answer(std::string_view reply, const FeatureSpec& spec);

struct FeatureInduction {
  std::string answer;
  int iterations = 0;
};

using FeatureAsker = std::function<std::string(const FeatureSpec& feature, const std::vector<Example>& pairs,
                                               int iteration)>;

// Asks with `batch` fresh pairs per iteration until an in-domain answer
// appears, for at most `max_iters` iterations.
FeatureInduction induce_grammar_feature(const FeatureSpec& feature, const std::vector<Example>& rows,
                                        const FeatureAsker& ask, std::uint64_t seed, std::size_t batch = 5,
                                        int max_iters = 10);

enum class VocabVerdict { correct, incorrect, skipped };

std::string to_string(VocabVerdict v);

// `hypothesis` unset is the null hypothesis (incorrect unless skipped).
VocabVerdict eval_vocab_hypothesis(const std::string& word, const std::optional<std::string>& hypothesis,
                                   const Wordlist& wl, bool exclude_morphology);

struct WordReferences {
  std::string word;
  std::vector<Example> refs;
};

struct DictionaryHit {
  std::string word;
  std::string translation;
};

struct TranslationPromptParts {
  std::string query;
  std::vector<WordReferences> references;
  std::optional<std::vector<DictionaryHit>> dictionary;
  std::optional<std::string> sketch;
};

// Templates used for a translation prompt.
struct TranslationTemplates {
  PromptTemplate header;      // {language_description} {source_language} {target_language} {query}
  PromptTemplate ref_block;   // {word} {source_language} {target_language} {refs}
  PromptTemplate ref_pair;    // {source_language} {target_language} {source} {target}
  PromptTemplate dict_block;  // {word} {translation} {source_language} {target_language}
  PromptTemplate sketch_block;  // {language} {sketch}
  PromptTemplate cot;
  PromptTemplate footer;      // {source_language} {target_language} {query} {marker}

  static TranslationTemplates load(const TemplateStore& store);
};

// Header, dictionary block (true or induced instruction), reference
// blocks, sketch block, reasoning cue (zs_cot), footer. Throws
// MissingComponent when the setting needs a part that is absent.
std::string assemble_translation_prompt(SettingKind kind, const TranslationPromptParts& parts,
                                        const TranslationTemplates& templates, const LanguageInfo& language,
                                        Direction d);

}  // namespace harness::translation
