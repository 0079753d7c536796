#pragma once

#include <stdexcept>
#include <string>

namespace fedrelu {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Precondition on a scalar/count argument violated.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Federated protocol misuse, e.g. synchronizing off schedule.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedrelu
