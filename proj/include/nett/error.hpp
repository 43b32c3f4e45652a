#pragma once

#include <stdexcept>
#include <string>

namespace nett {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operands with incompatible shapes, or a value violating a precondition.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf or divergence during an iterative computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or unreadable path.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace nett
