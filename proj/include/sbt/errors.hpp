#pragma once

#include <stdexcept>
#include <string>

namespace sbt {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input files, missing fields, unreadable paths. CLI exit code 2.
struct ParseError : Error {
  using Error::Error;
};

/// Invariant violations and out-of-range arguments. CLI exit code 2.
struct ValidationError : Error {
  using Error::Error;
};

/// Problem dimensions or work volume beyond the configured caps. CLI exit code 3.
struct CapacityError : Error {
  using Error::Error;
};

/// Solver failures: instability, singular operators, infeasibility. CLI exit code 3.
struct NumericalError : Error {
  using Error::Error;
};

}  // namespace sbt
