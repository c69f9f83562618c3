#pragma once

#include <stdexcept>
#include <string>

namespace densemp {

/// Bad argument to a library call (shape mismatch, K < 2, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid or inconsistent configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unusable input data: I/O failures, malformed manifests, exhausted sampling. CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

/// A manifest line that is not valid JSON or does not match the schema.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

/// No superpixel segment reaches the requested minimum size.
class SelectionExhaustedError : public DataError {
 public:
  using DataError::DataError;
};

/// The paired transform kept emptying the query foreground.
class EpisodeConstructionError : public DataError {
 public:
  using DataError::DataError;
};

/// The support foreground cannot produce a prototype; the caller skips the episode.
class EpisodeSkipError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite loss or parameter. CLI exit code 4.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace densemp
