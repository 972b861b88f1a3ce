#include "harness/core.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace harness {

std::string to_string(Domain d) {
  switch (d) {
    case Domain::functions:
      return "functions";
    case Domain::colours:
      return "colours";
    case Domain::translation:
      return "translation";
  }
  return "unknown";
}

std::string to_string(SettingKind k) {
  switch (k) {
    case SettingKind::few_shot:
      return "few_shot";
    case SettingKind::zs_cot:
      return "zs_cot";
    case SettingKind::true_instruction:
      return "true_instruction";
    case SettingKind::instruction_inference:
      return "instruction_inference";
  }
  return "unknown";
}

std::string to_string(RerankMethod m) {
  switch (m) {
    case RerankMethod::verbal_conf:
      return "verbal_conf";
    case RerankMethod::p_data:
      return "p_data";
    case RerankMethod::p_answer:
      return "p_answer";
    case RerankMethod::external_validator:
      return "external_validator";
  }
  return "unknown";
}

Domain parse_domain(std::string_view text) {
  for (auto d : {Domain::functions, Domain::colours, Domain::translation}) {
    if (text == to_string(d)) return d;
  }
  throw ConfigError("unknown domain: " + std::string(text));
}

SettingKind parse_setting_kind(std::string_view text) {
  for (auto k : {SettingKind::few_shot, SettingKind::zs_cot, SettingKind::true_instruction,
                 SettingKind::instruction_inference}) {
    if (text == to_string(k)) return k;
  }
  throw ConfigError("unknown setting: " + std::string(text));
}

RerankMethod parse_rerank_method(std::string_view text) {
  for (auto m : {RerankMethod::verbal_conf, RerankMethod::p_data, RerankMethod::p_answer,
                 RerankMethod::external_validator}) {
    if (text == to_string(m)) return m;
  }
  throw ConfigError("unknown rerank method: " + std::string(text));
}

void validate(const TaskInstance& instance) {
  if (instance.in_context.empty()) {
    throw PreconditionViolation("instance " + instance.id + " has no in-context examples");
  }
  if (instance.domain == Domain::functions && instance.in_context.size() != 5) {
    throw PreconditionViolation("functions instance " + instance.id + " must have 5 in-context examples");
  }
  for (const auto& ex : instance.in_context) {
    if (ex.source.empty()) throw PreconditionViolation("empty example source in " + instance.id);
  }
  if (instance.query.source.empty()) throw PreconditionViolation("empty query in " + instance.id);
}

Setting Setting::make(SettingKind kind, std::optional<RerankMethod> rerank) {
  const bool inference = kind == SettingKind::instruction_inference;
  if (inference != rerank.has_value()) {
    throw PreconditionViolation("rerank method is required for, and only for, instruction_inference");
  }
  return Setting(kind, rerank);
}

Setting Setting::parse(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) return make(parse_setting_kind(text));
  return make(parse_setting_kind(text.substr(0, colon)), parse_rerank_method(text.substr(colon + 1)));
}

std::string Setting::name() const {
  if (rerank_) return to_string(kind_) + ":" + to_string(*rerank_);
  return to_string(kind_);
}

std::vector<Setting> Setting::all() {
  return {make(SettingKind::few_shot),
          make(SettingKind::zs_cot),
          make(SettingKind::true_instruction),
          make(SettingKind::instruction_inference, RerankMethod::verbal_conf),
          make(SettingKind::instruction_inference, RerankMethod::p_data),
          make(SettingKind::instruction_inference, RerankMethod::p_answer),
          make(SettingKind::instruction_inference, RerankMethod::external_validator)};
}

ParsedAnswer parse_model_output(std::string_view reply, std::string_view marker) {
  if (marker.empty()) throw PreconditionViolation("answer marker must be non-empty");
  const auto pos = reply.rfind(marker);
  if (pos == std::string_view::npos) return {trim(reply), false};
  return {trim(reply.substr(pos + marker.size())), true};
}

std::string_view answer_marker(SettingKind kind) {
  return kind == SettingKind::zs_cot ? kFinalOutputMarker : kOutputMarker;
}

std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string normalize_whitespace(std::string_view s) { return join(split_whitespace(s), " "); }

bool contains_ci(std::string_view haystack, std::string_view needle) {
  return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

}  // namespace harness
