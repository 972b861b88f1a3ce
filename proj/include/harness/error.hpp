#pragma once

#include <stdexcept>
#include <string>

namespace harness {

// Base of every fault the harness raises. Values that are expected outcomes
// (an unparsable hypothesis, a skipped word) are never exceptions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionViolation : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  explicit EmptyInput(const std::string& what) : Error("empty input: " + what) {}
};

class FormatError : public Error {
 public:
  FormatError(std::size_t line, std::string reason)
      : Error("format error at line " + std::to_string(line) + ": " + reason),
        line_(line),
        reason_(std::move(reason)) {}

  std::size_t line() const { return line_; }
  const std::string& reason() const { return reason_; }

 private:
  std::size_t line_;
  std::string reason_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace harness
