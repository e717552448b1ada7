#pragma once

#include <stdexcept>
#include <string>

namespace tidm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or configuration value (CLI exit code 2).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Incompatible tensor shapes; the message names the operation and dims.
class ShapeError : public ValueError {
 public:
  using ValueError::ValueError;
};

/// A NaN or Inf was produced by an operation.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Failure while training, sampling or doing I/O (CLI exit code 3).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace tidm
