#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedcam {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or matrix extents do not match what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked on an object in the wrong state
/// (backward without forward, decide on an incomplete vote block, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Parameter and gradient vectors of different lengths were combined.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or infinity.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its documented domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// An experiment or client configuration is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
  ConfigError(const std::string& what, std::vector<std::string> fields) : Error(what), fields_(std::move(fields)) {}

  /// Offending config fields, when the error comes from validation.
  const std::vector<std::string>& fields() const noexcept { return fields_; }

 private:
  std::vector<std::string> fields_;
};

/// Every client was excluded from an aggregation.
class EmptyAggregationError : public Error {
 public:
  using Error::Error;
};

/// Wraps a failure raised inside a communication round.
class RoundError : public Error {
 public:
  RoundError(std::size_t round, const std::string& what)
      : Error("round " + std::to_string(round) + ": " + what), round_(round) {}

  std::size_t round() const noexcept { return round_; }

 private:
  std::size_t round_;
};

}  // namespace fedcam
