#pragma once

#include <stdexcept>
#include <string>

namespace forecast {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Problems with input data (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class IngestError : public DataError {
 public:
  using DataError::DataError;
};

class WindowingError : public DataError {
 public:
  using DataError::DataError;
};

class SplitError : public DataError {
 public:
  using DataError::DataError;
};

class InterpolationError : public DataError {
 public:
  using DataError::DataError;
};

class DenormalizationError : public DataError {
 public:
  using DataError::DataError;
};

/// Out-of-range arguments to numeric routines (coordinates, grid sizes, indices).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Shape or channel mismatch while building a computation graph.
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or other failure inside the optimization loop.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace forecast
