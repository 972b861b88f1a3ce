#include "harness/example_io.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace harness {

using nlohmann::json;

void write_examples(const std::vector<Example>& rows, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  for (const auto& row : rows) out << json{{"source", row.source}, {"target", row.target}}.dump() << '\n';
  if (!out) throw IoError("short write to " + file.string());
}

std::vector<Example> read_examples(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::vector<Example> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(line_no, e.what());
    }
    if (!j.is_object() || !j.contains("source") || !j.contains("target") || !j["source"].is_string() ||
        !j["target"].is_string()) {
      throw FormatError(line_no, "expected an object with string fields source and target");
    }
    Example ex{j["source"].get<std::string>(), j["target"].get<std::string>()};
    if (trim(ex.source).empty()) throw FormatError(line_no, "empty source");
    rows.push_back(std::move(ex));
  }
  return rows;
}

}  // namespace harness
