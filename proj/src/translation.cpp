#include "harness/translation.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "harness/example_io.hpp"
#include "harness/rerank.hpp"

namespace harness::translation {
namespace {

using nlohmann::json;

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> lines_of(std::string_view text) {
  std::vector<std::string> out;
  std::string line;
  std::istringstream in{std::string(text)};
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && to_lower(s.substr(0, prefix.size())) == to_lower(prefix);
}

std::string strip_decoration(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c != '"' && c != '`' && c != '{' && c != '}' && c != '*') out += c;
  }
  out = trim(out);
  // Single quotes only as a wrapper, so apostrophes survive.
  if (out.size() >= 2 && out.front() == '\'' && out.back() == '\'') out = trim(out.substr(1, out.size() - 2));
  while (!out.empty() && out.back() == '.') out.pop_back();
  return trim(out);
}

std::optional<std::pair<std::string, std::string>> split_arrow(std::string_view line) {
  static constexpr std::string_view kAscii = "->";
  static constexpr std::string_view kUnicode = "\xE2\x86\x92";
  auto pos = line.find(kAscii);
  auto len = kAscii.size();
  const auto u = line.find(kUnicode);
  if (u != std::string_view::npos && (pos == std::string_view::npos || u < pos)) {
    pos = u;
    len = kUnicode.size();
  }
  if (pos == std::string_view::npos) return std::nullopt;
  return std::pair{trim(line.substr(0, pos)), trim(line.substr(pos + len))};
}

}  // namespace

std::string to_string(Direction d) { return d == Direction::ek ? "ek" : "ke"; }

Direction parse_direction(std::string_view text) {
  if (text == "ek") return Direction::ek;
  if (text == "ke") return Direction::ke;
  throw ConfigError("unknown direction: " + std::string(text));
}

bool has_affix_marker(std::string_view t) {
  return t.find('*') != std::string_view::npos || (!t.empty() && (t.front() == '-' || t.back() == '-'));
}

std::string strip_affix_markers(std::string_view t) {
  std::string out;
  for (char c : t) {
    if (c != '*') out += c;
  }
  while (!out.empty() && out.front() == '-') out.erase(out.begin());
  while (!out.empty() && out.back() == '-') out.pop_back();
  return trim(out);
}

Wordlist Wordlist::parse_csv(std::string_view text) {
  Wordlist wl;
  const auto lines = lines_of(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(i + 1, "expected word,translation");
    const auto word = trim(std::string_view(line).substr(0, comma));
    const auto translation = trim(std::string_view(line).substr(comma + 1));
    if (i == 0 && to_lower(word) == "word" && to_lower(translation) == "translation") continue;
    if (word.empty() || translation.empty()) throw FormatError(i + 1, "empty word or translation");
    wl.add(word, translation);
  }
  return wl;
}

Wordlist Wordlist::load_csv(const std::filesystem::path& file) { return parse_csv(read_file(file)); }

void Wordlist::add(const std::string& word, const std::string& translation) {
  auto& list = entries_[to_lower(trim(word))];
  if (std::find(list.begin(), list.end(), translation) == list.end()) list.push_back(translation);
}

const std::vector<std::string>* Wordlist::find(std::string_view word) const {
  const auto it = entries_.find(to_lower(trim(word)));
  return it == entries_.end() ? nullptr : &it->second;
}

Wordlist Wordlist::inverted() const {
  Wordlist out;
  for (const auto& [word, translations] : entries_) {
    for (const auto& t : translations) {
      const auto key = strip_affix_markers(t);
      if (!key.empty()) out.add(key, word);
    }
  }
  return out;
}

std::vector<FeatureSpec> parse_feature_specs(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(0, e.what());
  }
  if (!j.is_array()) throw FormatError(0, "feature file must be a JSON array");
  std::vector<FeatureSpec> specs;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& row = j[i];
    try {
      FeatureSpec s{row.at("id").get<std::string>(), row.at("category").get<std::string>(),
                    row.at("slot").get<std::size_t>(), row.at("question").get<std::string>(),
                    row.at("domain").get<std::vector<std::string>>()};
      if (s.domain.empty()) throw FormatError(i + 1, "feature " + s.id + " has an empty domain");
      if (!ids.insert(s.id).second) throw FormatError(i + 1, "duplicate feature id " + s.id);
      specs.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw FormatError(i + 1, e.what());
    }
  }
  return specs;
}

std::vector<FeatureSpec> load_feature_specs(const std::filesystem::path& file) {
  return parse_feature_specs(read_file(file));
}

std::map<std::string, std::string> parse_sketch(std::string_view text, const std::vector<FeatureSpec>& specs) {
  const auto lines = lines_of(text);
  std::size_t start = lines.size();
  std::size_t end = lines.size();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]) == kSketchStart && start == lines.size()) start = i;
    if (trim(lines[i]) == kSketchEnd && start != lines.size() && i > start) {
      end = i;
      break;
    }
  }
  if (start == lines.size() || end == lines.size()) throw FormatError(0, "grammar sketch delimiters not found");

  std::map<std::string, std::size_t> slots_per_category;
  for (const auto& s : specs) {
    auto& n = slots_per_category[to_lower(s.category)];
    n = std::max(n, s.slot + 1);
  }

  std::map<std::string, std::vector<std::string>> items_by_category;
  for (std::size_t i = start + 1; i < end; ++i) {
    const auto line = trim(lines[i]);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw FormatError(i + 1, "expected 'Category: items'");
    const auto category = to_lower(trim(std::string_view(line).substr(0, colon)));
    const auto body = std::string_view(line).substr(colon + 1);
    const auto slots = slots_per_category.find(category);
    if (slots == slots_per_category.end()) continue;
    std::vector<std::string> items;
    if (body.find(';') != std::string_view::npos) {
      items = split_on(body, ';');
    } else if (slots->second == 1) {
      items = {trim(body)};
    } else {
      items = split_on(body, ',');
    }
    items_by_category[category] = std::move(items);
  }

  std::map<std::string, std::string> answers;
  for (const auto& s : specs) {
    std::string answer(kUnsure);
    const auto it = items_by_category.find(to_lower(s.category));
    if (it != items_by_category.end() && s.slot < it->second.size()) {
      auto item = it->second[s.slot];
      while (!item.empty() && item.back() == '.') item.pop_back();
      if (!item.empty() && !starts_with_ci(item, kUnsure)) answer = item;
    }
    answers[s.id] = answer;
  }
  return answers;
}

std::vector<GrammarFeature> gold_features(const std::vector<FeatureSpec>& specs, std::string_view sketch_text) {
  const auto answers = parse_sketch(sketch_text, specs);
  std::vector<GrammarFeature> out;
  for (const auto& s : specs) {
    const auto& answer = answers.at(s.id);
    if (std::find(s.domain.begin(), s.domain.end(), answer) == s.domain.end()) {
      throw FormatError(0, "gold answer for " + s.id + " is not in its domain: " + answer);
    }
    out.push_back(GrammarFeature{s, answer});
  }
  return out;
}

std::string render_sketch(const std::vector<FeatureSpec>& specs, const std::map<std::string, std::string>& answers) {
  std::vector<std::string> categories;
  std::map<std::string, std::map<std::size_t, std::vector<std::string>>> slots;
  for (const auto& s : specs) {
    if (std::find(categories.begin(), categories.end(), s.category) == categories.end()) categories.push_back(s.category);
    const auto it = answers.find(s.id);
    const std::string answer = it == answers.end() ? std::string(kUnsure) : it->second;
    auto& values = slots[s.category][s.slot];
    if (std::find(values.begin(), values.end(), answer) == values.end()) values.push_back(answer);
  }
  std::vector<std::string> lines{std::string(kSketchStart)};
  for (const auto& category : categories) {
    std::vector<std::string> items;
    bool has_comma = false;
    const auto& by_slot = slots[category];
    const auto count = by_slot.rbegin()->first + 1;
    for (std::size_t slot = 0; slot < count; ++slot) {
      const auto it = by_slot.find(slot);
      items.push_back(it == by_slot.end() ? std::string(kUnsure) : join(it->second, " / "));
      has_comma = has_comma || items.back().find(',') != std::string::npos;
    }
    lines.push_back(category + ": " + join(items, has_comma && items.size() > 1 ? "; " : ", "));
  }
  lines.emplace_back(kSketchEnd);
  return join(lines, "\n");
}

double eval_grammar_sketch(const std::map<std::string, std::string>& predicted,
                           const std::vector<GrammarFeature>& gold) {
  if (gold.empty()) throw EmptyInput("gold sketch has no features");
  std::size_t correct = 0;
  for (const auto& f : gold) {
    const auto it = predicted.find(f.spec.id);
    if (it != predicted.end() && it->second != kUnsure && it->second == f.gold) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

TranslationData load_corpus(const std::filesystem::path& dir) {
  TranslationData data;
  const auto lang = json::parse(read_file(dir / "language.json"), nullptr, false);
  if (lang.is_discarded() || !lang.is_object() || !lang.contains("name")) {
    throw FormatError(0, "language.json needs a name");
  }
  data.language.name = lang["name"].get<std::string>();
  data.language.description = lang.value("description", std::string());

  data.ek = ParallelCorpus{Direction::ek, read_examples(dir / "train.ek.jsonl"), read_examples(dir / "test.ek.jsonl")};
  data.ke.direction = Direction::ke;
  data.ke.test = read_examples(dir / "test.ke.jsonl");
  if (std::filesystem::exists(dir / "train.ke.jsonl")) {
    data.ke.rows = read_examples(dir / "train.ke.jsonl");
  } else {
    for (const auto& ex : data.ek.rows) data.ke.rows.push_back(Example{ex.target, ex.source});
  }
  if (data.ek.rows.empty()) throw FormatError(0, "empty training corpus in " + dir.string());

  data.wordlist = Wordlist::load_csv(dir / "wordlist.csv");
  const auto specs = load_feature_specs(dir / "features.json");
  data.sketch_text = trim(read_file(dir / "sketch.txt"));
  data.sketch = gold_features(specs, data.sketch_text);
  return data;
}

std::vector<std::string> query_words(std::string_view sentence) {
  std::string cleaned;
  for (char c : to_lower(sentence)) {
    const auto u = static_cast<unsigned char>(c);
    cleaned += (std::isalnum(u) || u >= 0x80 || c == '\'' || c == '-') ? c : ' ';
  }
  std::vector<std::string> out;
  for (auto w : split_whitespace(cleaned)) {
    while (!w.empty() && (w.front() == '\'' || w.front() == '-')) w.erase(w.begin());
    while (!w.empty() && (w.back() == '\'' || w.back() == '-')) w.pop_back();
    if (!w.empty() && std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
  }
  return out;
}

std::size_t lcs_length(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::size_t longest_common_substring(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  std::size_t best = 0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : 0;
      best = std::max(best, cur[j]);
    }
    std::swap(prev, cur);
  }
  return best;
}

std::vector<Example> retrieve_refs(const std::string& word, const std::vector<Example>& rows, std::size_t n) {
  if (rows.empty()) throw PreconditionViolation("retrieval over an empty corpus");
  const auto key = to_lower(word);
  std::vector<std::size_t> scores(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) scores[i] = lcs_length(key, to_lower(rows[i].source));
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<Example> out;
  for (std::size_t i = 0; i < std::min(n, order.size()); ++i) out.push_back(rows[order[i]]);
  return out;
}

std::pair<std::string, std::vector<std::string>> retrieve_wordlist_entry(const std::string& word, const Wordlist& wl) {
  if (wl.empty()) throw PreconditionViolation("retrieval over an empty wordlist");
  const auto key = to_lower(word);
  const std::pair<const std::string, std::vector<std::string>>* best = nullptr;
  std::size_t best_len = 0;
  for (const auto& entry : wl.entries()) {
    const auto len = longest_common_substring(key, entry.first);
    if (!best || len > best_len) {
      best = &entry;
      best_len = len;
    }
  }
  return {best->first, best->second};
}

std::vector<Example> vocab_examples(const std::string& word, const std::vector<Example>& rows, std::size_t k) {
  std::vector<Example> out;
  const auto key = to_lower(word);
  for (const auto& row : rows) {
    if (out.size() >= k) break;
    const auto words = query_words(row.source);
    if (std::find(words.begin(), words.end(), key) != words.end()) out.push_back(row);
  }
  if (out.empty()) out = retrieve_refs(word, rows, 2);
  return out;
}

std::optional<std::string> parse_vocab_hypothesis(std::string_view raw) {
  for (const auto& line : lines_of(raw)) {
    const auto split = split_arrow(line);
    if (!split) continue;
    auto translation = strip_decoration(split->second);
    if (!translation.empty()) return translation;
  }
  return std::nullopt;
}

double external_validate(const Hypothesis& h, const std::vector<Example>& examples) {
  const auto translation = parse_vocab_hypothesis(h.raw);
  if (!translation) return kMinusInfinity;
  const auto core = to_lower(strip_affix_markers(*translation));
  if (core.empty()) return kMinusInfinity;
  if (examples.empty()) return 0.0;
  std::size_t misses = 0;
  for (const auto& ex : examples) {
    if (to_lower(ex.target).find(core) == std::string::npos) ++misses;
  }
  return -static_cast<double>(misses) / static_cast<double>(examples.size());
}

std::mutex& VocabHypothesisCache::key_mutex(const std::string& key) {
  std::lock_guard lock(mu_);
  auto& slot = key_mutexes_[key];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

std::optional<VocabHypothesisCache::Entry> VocabHypothesisCache::get(Direction d, const std::string& word) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(to_string(d) + "\t" + to_lower(word));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::optional<VocabHypothesisCache::Entry> VocabHypothesisCache::get_or_induce(
    Direction d, const std::string& word, const std::function<std::optional<Entry>()>& induce, bool* cached) {
  const auto key = to_string(d) + "\t" + to_lower(word);
  std::lock_guard key_lock(key_mutex(key));
  if (auto hit = get(d, word)) {
    if (cached) *cached = true;
    return hit;
  }
  if (cached) *cached = false;
  auto fresh = induce();
  if (fresh) {
    std::lock_guard lock(mu_);
    entries_.emplace(key, *fresh);
  }
  return fresh;
}

std::size_t VocabHypothesisCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

VocabInduction induce_vocab(const std::string& word, Direction d, const std::vector<Example>& rows,
                            VocabHypothesisCache& cache, const CandidateSource& sample) {
  VocabInduction out;
  std::vector<ScoredHypothesis> unselected;
  const auto entry = cache.get_or_induce(
      d, word,
      [&]() -> std::optional<VocabHypothesisCache::Entry> {
        auto candidates = sample(word, vocab_examples(word, rows));
        const auto selection = select_best(candidates);
        if (!selection.index) {
          unselected = std::move(candidates);
          return std::nullopt;
        }
        auto chosen = candidates[*selection.index];
        return VocabHypothesisCache::Entry{std::move(chosen), std::move(candidates)};
      },
      &out.cached);
  if (entry) {
    out.chosen = entry->chosen;
    out.candidates = entry->candidates;
  } else {
    out.candidates = std::move(unselected);
  }
  return out;
}

std::string parse_feature_answer(std::string_view reply, const FeatureSpec& spec) {
  std::string text(reply);
  const auto marker = to_lower(text).rfind("answer:");
  if (marker != std::string::npos) text = text.substr(marker + 7);
  text = trim(text);
  while (!text.empty() && text.back() == '.') text.pop_back();
  text = trim(strip_decoration(text));
  if (text.empty() || starts_with_ci(text, kUnsure)) return std::string(kUnsure);

  const auto lowered = to_lower(text);
  for (const auto& entry : spec.domain) {
    const auto short_form = entry.substr(0, entry.find(" ("));
    if (lowered == to_lower(entry) || lowered == to_lower(short_form)) return entry;
  }
  std::optional<std::string> found;
  for (const auto& entry : spec.domain) {
    if (contains_ci(text, entry)) {
      if (found) return std::string(kUnsure);
      found = entry;
    }
  }
  return found.value_or(std::string(kUnsure));
}

FeatureInduction induce_grammar_feature(const FeatureSpec& feature, const std::vector<Example>& rows,
                                        const FeatureAsker& ask, std::uint64_t seed, std::size_t batch,
                                        int max_iters) {
  if (batch == 0 || rows.size() < batch) throw PreconditionViolation("corpus smaller than the feature batch");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t next = 0;
  for (int iteration = 1; iteration <= max_iters; ++iteration) {
    if (next + batch > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      next = 0;
    }
    std::vector<Example> pairs;
    for (std::size_t i = 0; i < batch; ++i) pairs.push_back(rows[order[next++]]);
    const auto answer = parse_feature_answer(ask(feature, pairs, iteration), feature);
    if (answer != kUnsure) return FeatureInduction{answer, iteration};
  }
  return FeatureInduction{std::string(kUnsure), max_iters};
}

std::string to_string(VocabVerdict v) {
  switch (v) {
    case VocabVerdict::correct:
      return "correct";
    case VocabVerdict::incorrect:
      return "incorrect";
    case VocabVerdict::skipped:
      return "skipped";
  }
  return "skipped";
}

VocabVerdict eval_vocab_hypothesis(const std::string& word, const std::optional<std::string>& hypothesis,
                                   const Wordlist& wl, bool exclude_morphology) {
  const auto* translations = wl.find(word);
  if (!translations) return VocabVerdict::skipped;
  std::vector<std::string> candidates;
  for (const auto& t : *translations) {
    if (!(exclude_morphology && has_affix_marker(t))) candidates.push_back(t);
  }
  if (candidates.empty()) return VocabVerdict::skipped;
  if (!hypothesis) return VocabVerdict::incorrect;
  const auto guess = to_lower(strip_decoration(*hypothesis));
  if (guess.empty()) return VocabVerdict::incorrect;
  for (const auto& t : candidates) {
    if (!has_affix_marker(t)) {
      if (guess == to_lower(trim(t))) return VocabVerdict::correct;
      continue;
    }
    const auto core = to_lower(strip_affix_markers(t));
    if (core.empty()) continue;
    const bool leading = t.front() == '-' || t.front() == '*';
    const bool trailing = t.back() == '-' || t.back() == '*';
    bool ok = false;
    if (leading && trailing) {
      ok = guess.find(core) != std::string::npos;
    } else if (leading) {
      ok = guess.ends_with(core);
    } else if (trailing) {
      ok = guess.starts_with(core);
    } else {
      ok = guess == core;
    }
    if (ok) return VocabVerdict::correct;
  }
  return VocabVerdict::incorrect;
}

TranslationTemplates TranslationTemplates::load(const TemplateStore& store) {
  const std::string d = "translation";
  return TranslationTemplates{store.get(d, "header"),       store.get(d, "ref_block"), store.get(d, "ref_pair"),
                              store.get(d, "dict_block"),   store.get(d, "sketch_block"), store.get(d, "cot"),
                              store.get(d, "footer")};
}

std::string assemble_translation_prompt(SettingKind kind, const TranslationPromptParts& parts,
                                        const TranslationTemplates& templates, const LanguageInfo& language,
                                        Direction d) {
  if (trim(parts.query).empty()) throw MissingComponent("query");
  if (parts.references.empty()) throw MissingComponent("reference sentences");
  const std::string source = d == Direction::ek ? "English" : language.name;
  const std::string target = d == Direction::ek ? language.name : "English";
  const Bindings languages{{"language", language.name},
                           {"language_description", language.description},
                           {"source_language", source},
                           {"target_language", target}};
  auto with = [&](Bindings extra) {
    extra.insert(languages.begin(), languages.end());
    return extra;
  };

  const bool instructed = kind == SettingKind::true_instruction || kind == SettingKind::instruction_inference;
  std::vector<std::string> sections;
  sections.push_back(render_template(templates.header, with({{"query", parts.query}})));

  if (instructed) {
    if (!parts.dictionary) throw MissingComponent("dictionary entries");
    std::vector<std::string> entries;
    for (const auto& hit : *parts.dictionary) {
      entries.push_back(
          render_template(templates.dict_block, with({{"word", hit.word}, {"translation", hit.translation}})));
    }
    if (!entries.empty()) sections.push_back(join(entries, "\n\n"));
  }

  std::vector<std::string> blocks;
  for (const auto& wr : parts.references) {
    std::vector<std::string> pairs;
    for (const auto& ex : wr.refs) {
      pairs.push_back(render_template(templates.ref_pair, with({{"source", ex.source}, {"target", ex.target}})));
    }
    blocks.push_back(render_template(templates.ref_block, with({{"word", wr.word}, {"refs", join(pairs, "\n")}})));
  }
  sections.push_back(join(blocks, "\n\n"));

  if (instructed) {
    if (!parts.sketch) throw MissingComponent("grammar sketch");
    sections.push_back(render_template(templates.sketch_block, with({{"sketch", *parts.sketch}})));
  }
  if (kind == SettingKind::zs_cot) sections.push_back(render_template(templates.cot, languages));
  sections.push_back(render_template(
      templates.footer, with({{"query", parts.query}, {"marker", std::string(answer_marker(kind))}})));
  return join(sections, "\n\n");
}

}  // namespace harness::translation
