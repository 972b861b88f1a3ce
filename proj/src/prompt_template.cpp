#include "harness/prompt_template.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace harness {
namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Length of a slot token starting at body[pos] == '{', or 0 if the brace is
// literal.
std::size_t slot_length(std::string_view body, std::size_t pos) {
  if (pos + 2 >= body.size() || !is_ident_start(body[pos + 1])) return 0;
  std::size_t i = pos + 2;
  while (i < body.size() && is_ident_char(body[i])) ++i;
  if (i >= body.size() || body[i] != '}') return 0;
  return i - pos + 1;
}

}  // namespace

std::vector<std::string> find_slots(std::string_view body) {
  std::vector<std::string> slots;
  std::set<std::string> seen;
  for (std::size_t pos = body.find('{'); pos != std::string_view::npos; pos = body.find('{', pos + 1)) {
    const auto len = slot_length(body, pos);
    if (len == 0) continue;
    std::string name(body.substr(pos + 1, len - 2));
    if (seen.insert(name).second) slots.push_back(std::move(name));
  }
  return slots;
}

PromptTemplate PromptTemplate::from_body(std::string id, std::string body) {
  auto slots = find_slots(body);
  return PromptTemplate{std::move(id), std::move(body), std::move(slots)};
}

std::string render_template(const PromptTemplate& tmpl, const Bindings& bindings, bool strict) {
  for (const auto& slot : tmpl.required_slots) {
    if (!bindings.contains(slot)) throw MissingSlot(slot);
  }
  if (strict) {
    for (const auto& [name, value] : bindings) {
      if (std::find(tmpl.required_slots.begin(), tmpl.required_slots.end(), name) == tmpl.required_slots.end()) {
        throw UnknownSlot(name);
      }
    }
  }

  const std::string_view body = tmpl.body;
  std::string out;
  out.reserve(body.size());
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] == '{') {
      const auto len = slot_length(body, i);
      if (len > 0) {
        const std::string name(body.substr(i + 1, len - 2));
        const auto it = bindings.find(name);
        if (it == bindings.end()) throw MissingSlot(name);
        out += it->second;
        i += len;
        continue;
      }
    }
    out += body[i++];
  }
  return out;
}

RenderedBlock render_examples(const PromptTemplate& example_tmpl, const std::vector<Example>& examples,
                              std::string_view separator) {
  const std::string_view body = example_tmpl.body;
  const auto out_pos = body.find("{output}");
  if (out_pos == std::string_view::npos) {
    throw PreconditionViolation("example template " + example_tmpl.id + " has no {output} slot");
  }
  const auto head = PromptTemplate::from_body(example_tmpl.id + ".head", std::string(body.substr(0, out_pos)));
  const auto tail = PromptTemplate::from_body(example_tmpl.id + ".tail",
                                              std::string(body.substr(out_pos + std::string_view("{output}").size())));

  RenderedBlock block;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (i) block.text += separator;
    const Bindings b{{"input", examples[i].source}, {"output", examples[i].target}};
    block.text += render_template(head, b);
    const auto start = block.text.size();
    block.text += examples[i].target;
    block.answer_spans.emplace_back(start, block.text.size());
    block.text += render_template(tail, b);
  }
  return block;
}

PromptTemplate TemplateStore::get(std::string_view domain, std::string_view id) const {
  const auto path = root_ / std::string(domain) / (std::string(id) + ".txt");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open template " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string body = ss.str();
  if (!body.empty() && body.back() == '\n') body.pop_back();
  return PromptTemplate::from_body(std::string(domain) + "/" + std::string(id), std::move(body));
}

}  // namespace harness
