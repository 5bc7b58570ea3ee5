#pragma once

#include <stdexcept>
#include <string>

namespace vnn {

// Every failure the library reports derives from Error. The CLI maps the
// category to an exit code, so pick the most specific type when throwing.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class TruncationError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Raised when a retrieval metric has no relevant item to normalize by.
class UndefinedMetricError : public DomainError {
 public:
  using DomainError::DomainError;
};

}  // namespace vnn
