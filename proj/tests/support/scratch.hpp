#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "harness/runner.hpp"

namespace harness::testing {

// A fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& stem) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (stem + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// A single-temperature run over every setting with the shipped templates.
inline RunConfig oracle_config(Domain domain, const std::filesystem::path& data_dir,
                               const std::filesystem::path& output_dir, int trials = 1) {
  RunConfig cfg;
  cfg.model_id = "oracle";
  cfg.scorer_model_id = "oracle";
  cfg.domain = domain;
  cfg.settings = Setting::all();
  cfg.schedule = {{0.0, trials}};
  cfg.trials = trials;
  cfg.hypothesis_temperature = 1.0;
  cfg.seed = 7;
  cfg.parallelism = 4;
  cfg.data_dir = data_dir;
  cfg.templates_dir = default_templates_dir();
  cfg.output_dir = output_dir;
  cfg.base_url = "http://localhost";
  return cfg;
}

}  // namespace harness::testing
