#pragma once

#include <stdexcept>
#include <string>

namespace cfilter {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor or layer shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced by an operation, a loss or a parameter update.
class NumericFault : public Error {
 public:
  using Error::Error;
};

// Misuse of the compute graph (double backward, non-scalar or detached loss).
class GraphError : public Error {
 public:
  using Error::Error;
};

// Invalid user-supplied configuration or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated or version-mismatched files.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace cfilter
