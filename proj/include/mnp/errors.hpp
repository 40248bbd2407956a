#pragma once

#include <stdexcept>
#include <string>

namespace mnp {

// Error taxonomy. The CLI maps these onto distinct exit codes, so keep the
// hierarchy flat and the categories disjoint.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad arguments, malformed files, dimension mismatches: caller mistakes.
struct ValidationError : Error {
  using Error::Error;
};

struct ArgumentError : ValidationError {
  using ValidationError::ValidationError;
};

struct ParseError : ValidationError {
  using ValidationError::ValidationError;
};

struct ConfigError : ValidationError {
  using ValidationError::ValidationError;
};

// Numerical failures: factorizations, CDF evaluation, infeasible samplers.
struct NumericError : Error {
  using Error::Error;
};

struct SingularMatrixError : NumericError {
  using NumericError::NumericError;
};

// Problem size beyond a configured cap.
struct CapacityError : Error {
  using Error::Error;
};

// Iterative routine stopped before reaching its tolerance.
struct NonConvergenceError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace mnp
