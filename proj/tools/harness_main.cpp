// Command-line entry point: gen-data, run, summarize, oracle-check.

#include <cstdlib>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "harness/backends.hpp"
#include "harness/oracles.hpp"
#include "harness/runner.hpp"
#include "harness/summary.hpp"

namespace {

int gen_data_cmd(const std::string& domain, std::uint64_t seed, const std::filesystem::path& out) {
  for (const auto& [file, rows] : harness::gen_data(domain, seed, out)) {
    std::cout << (out / file).string() << ": " << rows << " rows\n";
  }
  return 0;
}

int run_cmd(const std::filesystem::path& config_file, const std::string& replay_dir, const std::string& record_dir,
            std::optional<std::size_t> stop_after) {
  auto cfg = harness::load_run_config(config_file);
  if (!replay_dir.empty()) {
    cfg.cache_mode = harness::CacheMode::replay;
    cfg.cache_dir = replay_dir;
  } else if (!record_dir.empty()) {
    cfg.cache_mode = harness::CacheMode::record;
    cfg.cache_dir = record_dir;
  }

  std::unique_ptr<harness::HttpBackend> http;
  if (cfg.cache_mode != harness::CacheMode::replay) {
    const char* key = std::getenv(cfg.api_key_env.c_str());
    if (!key || !*key) {
      std::cerr << "error: environment variable " << cfg.api_key_env << " is not set\n";
      return 2;
    }
    http = std::make_unique<harness::HttpBackend>(harness::HttpBackendOptions{cfg.base_url, key});
  }

  harness::RunBackends backends;
  std::unique_ptr<harness::ReplayBackend> replay;
  std::unique_ptr<harness::CachingBackend> caching;
  switch (cfg.cache_mode) {
    case harness::CacheMode::replay:
      replay = std::make_unique<harness::ReplayBackend>(std::make_shared<harness::CacheStore>(cfg.cache_dir));
      backends = {replay.get(), replay.get()};
      break;
    case harness::CacheMode::record:
      caching = std::make_unique<harness::CachingBackend>(std::make_shared<harness::CacheStore>(cfg.cache_dir),
                                                          http.get(), http.get());
      backends = {caching.get(), caching.get()};
      break;
    case harness::CacheMode::off:
      backends = {http.get(), http.get()};
      break;
  }

  const auto manifest = harness::run_experiment(cfg, backends, {stop_after});
  const auto& c = manifest.counts;
  std::cout << "records " << c.records << " (new " << c.written << ", resumed " << c.resumed << "), fallbacks "
            << c.fallbacks << ", backend errors " << c.backend_errors << '\n';
  for (const auto& [dir, acc] : manifest.sketch_accuracy) std::cout << "sketch " << dir << ": " << acc << '\n';
  std::cout << "manifest " << harness::manifest_path(cfg.output_dir, cfg.model_id, cfg.domain).string() << '\n';
  return manifest.completed ? 0 : 3;
}

int summarize_cmd(const std::filesystem::path& records, const std::filesystem::path& out) {
  const auto summary = harness::summarize(harness::load_record_dir(records));
  harness::write_summary(summary, out);
  for (const auto& row : summary.rows) {
    std::cout << row.model_id << '\t' << harness::to_string(row.domain) << '\t' << row.setting << '\t'
              << row.accuracy << " +/- " << row.accuracy_se << '\n';
  }
  return 0;
}

int oracle_check_cmd(std::size_t cases, std::uint64_t seed) {
  bool ok = true;
  for (const auto& t : harness::oracles::run_metric_checks(cases, seed)) {
    std::cout << (t.passed() ? "ok   " : "FAIL ") << t.name << ": " << t.cases << " cases, max deviation "
              << t.max_deviation << " (tolerance " << t.tolerance << "), errors " << t.errors << '\n';
    ok = ok && t.passed();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-context rule induction experiment harness"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a domain's datasets");
  std::string gen_domain;
  std::uint64_t gen_seed = 0;
  std::filesystem::path gen_out = "data";
  gen->add_option("domain", gen_domain, "functions, colours or fixture-translation")->required();
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output directory");

  auto* run = app.add_subcommand("run", "Run one model on one domain");
  std::filesystem::path config_file;
  std::string replay_dir;
  std::string record_dir;
  std::optional<std::size_t> stop_after;
  run->add_option("--config", config_file, "key = value config file")->required()->check(CLI::ExistingFile);
  auto* replay_opt = run->add_option("--replay", replay_dir, "Serve every request from this cache");
  auto* record_opt = run->add_option("--record", record_dir, "Record live responses into this cache");
  replay_opt->excludes(record_opt);
  run->add_option("--stop-after", stop_after, "Stop after this many new records");

  auto* summ = app.add_subcommand("summarize", "Aggregate record files into CSV tables");
  std::filesystem::path records_dir;
  std::filesystem::path summary_out;
  summ->add_option("--records", records_dir, "Directory of record files")->required()->check(CLI::ExistingDirectory);
  summ->add_option("--out", summary_out, "Output directory")->required();

  auto* oracle = app.add_subcommand("oracle-check", "Compare metrics against brute-force oracles");
  std::size_t cases = 200;
  std::uint64_t oracle_seed = 1;
  oracle->add_option("--cases", cases, "Randomized cases per metric");
  oracle->add_option("--seed", oracle_seed, "Case generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_data_cmd(gen_domain, gen_seed, gen_out);
    if (*run) return run_cmd(config_file, replay_dir, record_dir, stop_after);
    if (*summ) return summarize_cmd(records_dir, summary_out);
    if (*oracle) return oracle_check_cmd(cases, oracle_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
