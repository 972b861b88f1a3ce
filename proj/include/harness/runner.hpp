#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/backends.hpp"
#include "harness/core.hpp"
#include "harness/records.hpp"
#include "harness/translation.hpp"

namespace harness {

struct TemperatureStep {
  double temperature = 0.0;
  int repetitions = 0;

  bool operator==(const TemperatureStep&) const = default;
};

enum class CacheMode { off, record, replay };

std::string to_string(CacheMode m);
CacheMode parse_cache_mode(std::string_view text);

// "0:3,1:3" -> {(0, 3), (1, 3)}.
std::vector<TemperatureStep> parse_schedule(std::string_view text);
std::string format_schedule(const std::vector<TemperatureStep>& schedule);

struct RunConfig {
  std::string model_id;
  std::string scorer_model_id;
  Domain domain = Domain::functions;
  std::vector<Setting> settings;
  int n_hypotheses = 5;
  int trials = 6;
  std::vector<TemperatureStep> schedule;
  double hypothesis_temperature = 1.0;
  double confidence_temperature = 0.0;
  double grammar_temperature = 0.7;
  std::uint64_t seed = 0;
  int parallelism = 1;
  std::filesystem::path data_dir;
  std::filesystem::path templates_dir;
  std::filesystem::path output_dir;
  CacheMode cache_mode = CacheMode::off;
  std::filesystem::path cache_dir;
  std::string base_url;
  std::string api_key_env = "HARNESS_API_KEY";
  std::optional<int> max_tokens;
  std::optional<std::size_t> limit;
  std::vector<translation::Direction> directions{translation::Direction::ek, translation::Direction::ke};
  std::size_t grammar_batch = 5;
  int grammar_max_iters = 10;

  // One temperature per trial, in schedule order.
  std::vector<double> trial_temperatures() const;
  // Throws ConfigError.
  void validate() const;
};

// key = value lines, '#' comments. Unset keys take the defaults of the
// model family (llama or gpt) and domain. Throws ConfigError.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& file);
nlohmann::json to_json(const RunConfig& config);

struct RunCounts {
  std::size_t records = 0;
  std::size_t written = 0;
  std::size_t resumed = 0;
  std::size_t fallbacks = 0;
  std::size_t parse_failures = 0;
  std::size_t hypothesis_parse_failures = 0;
  std::size_t backend_errors = 0;
};

struct RunManifest {
  nlohmann::json config;
  std::string git_describe;
  std::string started_at;
  std::string finished_at;
  RunCounts counts;
  std::vector<std::filesystem::path> record_files;
  // Induced grammar sketch accuracy by direction (translation only).
  std::map<std::string, double> sketch_accuracy;
  std::map<std::string, std::filesystem::path> sketch_files;
  bool completed = false;
};

nlohmann::json to_json(const RunManifest& manifest);

struct RunBackends {
  ChatBackend* chat = nullptr;
  LogprobBackend* logprobs = nullptr;
};

struct RunOptions {
  // Stop after persisting this many new records, as if killed.
  std::optional<std::size_t> stop_after;
};

// `<out>/<model>__<domain>__<setting>.jsonl`, ':' and '/' mapped to '-'.
std::filesystem::path records_path(const std::filesystem::path& out_dir, const std::string& model_id, Domain domain,
                                   const Setting& setting);
std::filesystem::path manifest_path(const std::filesystem::path& out_dir, const std::string& model_id, Domain domain);

// Runs every (setting, trial, instance) not already persisted, appending
// records in a fixed order, and writes the manifest.
RunManifest run_experiment(const RunConfig& config, const RunBackends& backends, const RunOptions& options = {});

// Writes the domain's datasets under `out` and returns row counts by file
// name. Domains: functions, colours, fixture-translation.
std::map<std::string, std::size_t> gen_data(std::string_view domain, std::uint64_t seed,
                                            const std::filesystem::path& out);

// Source of the in-repo fixture language.
std::filesystem::path fixture_language_dir();
std::filesystem::path default_templates_dir();

}  // namespace harness
