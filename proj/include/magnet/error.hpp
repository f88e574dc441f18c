#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace magnet {

// Root of every error thrown by the library. `kind()` is a stable
// machine-readable tag used by the CLI when emitting structured errors.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Malformed input file. Carries the 1-based line number when known.
class FormatError : public Error {
 public:
  FormatError(const std::string& path, std::size_t line, const std::string& msg)
      : Error("format_error", path + (line ? ":" + std::to_string(line) : std::string()) + ": " + msg),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error("validation_error", msg) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& msg) : Error("input_error", msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io_error", msg) {}
};

class PromptTooLongError : public Error {
 public:
  PromptTooLongError(std::size_t n_tokens, std::size_t limit)
      : Error("prompt_too_long", "prompt encodes to " + std::to_string(n_tokens) +
                                     " word tokens; at most " + std::to_string(limit) +
                                     " fit before the end-of-text token"),
        n_tokens_(n_tokens) {}
  std::size_t n_tokens() const noexcept { return n_tokens_; }

 private:
  std::size_t n_tokens_;
};

class LoadError : public Error {
 public:
  explicit LoadError(const std::string& msg) : Error("load_error", msg) {}
};

class ExtractionError : public Error {
 public:
  explicit ExtractionError(const std::string& msg) : Error("extraction_error", msg) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error("parse_error", msg) {}
};

class ResolutionError : public Error {
 public:
  explicit ResolutionError(const std::string& msg) : Error("resolution_error", msg) {}
};

class UnsupportedCaseError : public Error {
 public:
  explicit UnsupportedCaseError(const std::string& msg) : Error("unsupported_case", msg) {}
};

}  // namespace magnet
