#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace linesight {

// Base of every error the library throws. The CLI maps the subclasses onto
// exit codes: ValidationError -> 1, IoError -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument values, violated preconditions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Shape or size mismatch between operands.
class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Configuration references something that does not exist or does not fit.
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// An operation was invoked in a state that does not allow it.
class StateError : public Error {
 public:
  using Error::Error;
};

// Detection -> crop -> anomaly chaining could not proceed.
class ChainingError : public Error {
 public:
  using Error::Error;
};

// Training or optimization produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. Carries the byte offset where parsing failed.
class FormatError : public IoError {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : IoError(what + " at byte offset " + std::to_string(offset)),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace linesight
