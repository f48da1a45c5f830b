#pragma once

#include <stdexcept>
#include <string>

namespace apslstm {

// Base of every error thrown by the library. The CLI maps the concrete
// subclass to a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed, inconsistent or insufficient input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Iterative numerics failed to converge or produced non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace apslstm
