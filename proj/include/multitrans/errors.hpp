#pragma once

#include <stdexcept>
#include <string>

namespace multitrans {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An index (token id, label, class) is outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, divergence, or a failed gradient check.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input files and datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace multitrans
