#pragma once

#include <stdexcept>
#include <string>

namespace kronfisher {

// Every failure the library reports derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or lengths that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Arguments that are well-shaped but semantically invalid.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A run configuration that does not conform to the published schema.
class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Operation called in the wrong lifecycle state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// Iterative routine ran out of iterations.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Malformed external input (IDX, CSV, JSON).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf surfaced in a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace kronfisher
