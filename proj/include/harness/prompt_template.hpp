#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "harness/core.hpp"

namespace harness {

class MissingSlot : public Error {
 public:
  explicit MissingSlot(std::string name) : Error("missing slot: " + name), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class UnknownSlot : public Error {
 public:
  explicit UnknownSlot(std::string name) : Error("unknown slot: " + name), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

using Bindings = std::map<std::string, std::string>;

// A prompt body with `{name}` slots. A slot name is an identifier
// ([A-Za-z_][A-Za-z0-9_]*); any other brace text is literal.
struct PromptTemplate {
  std::string id;
  std::string body;
  std::vector<std::string> required_slots;

  static PromptTemplate from_body(std::string id, std::string body);
};

// Slot names in order of first appearance.
std::vector<std::string> find_slots(std::string_view body);

// Single-pass substitution: bound values are never re-scanned for slots.
std::string render_template(const PromptTemplate& tmpl, const Bindings& bindings, bool strict = false);

// An in-context block plus the character span of every example's target
// inside it.
struct RenderedBlock {
  std::string text;
  std::vector<std::pair<std::size_t, std::size_t>> answer_spans;
};

// Renders each example with `example_tmpl` (slots {input} and {output}) and
// joins them with `separator`. The span for an example covers exactly the
// text bound to {output}.
RenderedBlock render_examples(const PromptTemplate& example_tmpl, const std::vector<Example>& examples,
                              std::string_view separator);

// Loads `<root>/<domain>/<id>.txt`. A single trailing newline is dropped.
class TemplateStore {
 public:
  explicit TemplateStore(std::filesystem::path root) : root_(std::move(root)) {}

  PromptTemplate get(std::string_view domain, std::string_view id) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

}  // namespace harness
