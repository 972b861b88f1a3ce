#pragma once

#include <filesystem>
#include <vector>

#include "harness/core.hpp"

namespace harness {

// JSONL rows {"source": ..., "target": ...}.
void write_examples(const std::vector<Example>& rows, const std::filesystem::path& file);

// Throws FormatError(line, reason) on malformed rows or an empty source.
std::vector<Example> read_examples(const std::filesystem::path& file);

}  // namespace harness
