#pragma once

#include <stdexcept>
#include <string>

namespace p2ssm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files. The message names the offending line.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Inputs that parse but violate a domain invariant or precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IllConditionedError : public Error {
 public:
  using Error::Error;
};

// Bad experiment configuration; the message carries the dot path of the key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values during training or inference.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace p2ssm
