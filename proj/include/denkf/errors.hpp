#pragma once

#include <stdexcept>
#include <string>

namespace denkf {

/// Base class for all library errors.  Catch this to handle anything thrown
/// by denkf; catch the subclasses to react to specific failure modes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A caller-supplied value violates a documented precondition (bad dimension,
/// out-of-range label, non-finite input, ...).
class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(what) {}
};

/// An operation was called in the wrong order (e.g. update() before
/// predict(), or reusing a consumed gradient tape).
class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error(what) {}
};

/// Training failed numerically (NaN/inf loss or gradients).
class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error(what) {}
};

/// The innovation covariance could not be kept positive definite even after
/// jitter escalation; the filter cannot continue from this state.
class FilterDivergence : public Error {
 public:
  explicit FilterDivergence(const std::string& what) : Error(what) {}
};

/// A file could not be parsed.  Carries 1-based line and field positions
/// when they are known (0 = unknown).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0, std::size_t field = 0)
      : Error(format(what, line, field)), line_(line), field_(field) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t field() const noexcept { return field_; }

 private:
  static std::string format(const std::string& what, std::size_t line, std::size_t field) {
    std::string msg = what;
    if (line > 0) {
      msg += " (line " + std::to_string(line);
      if (field > 0) msg += ", field " + std::to_string(field);
      msg += ")";
    }
    return msg;
  }

  std::size_t line_;
  std::size_t field_;
};

/// A configuration value is missing, malformed, or inconsistent.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/// A checkpoint or dataset declares a layout this build cannot consume.
class IncompatibleLayout : public Error {
 public:
  explicit IncompatibleLayout(const std::string& what) : Error(what) {}
};

}  // namespace denkf
