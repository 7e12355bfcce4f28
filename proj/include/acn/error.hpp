#pragma once

#include <stdexcept>
#include <string>

namespace acn {

// Every failure raised by the library derives from Error. The CLI maps
// ConfigError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced by an op, a loss, or an optimizer step.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training loss exceeded the divergence threshold or went non-finite.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace acn
