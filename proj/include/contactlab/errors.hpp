#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace contactlab {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, log of nonpositive numbers, degenerate normalizations.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or invalid hyperparameter combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (label files, meshes, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

// Warnings are collected per thread so pure functions can report soft
// failures (clamped logs, empty masks) without a logger dependency.
void warn(std::string message);
std::vector<std::string> take_warnings();
std::size_t pending_warning_count();

}  // namespace contactlab
