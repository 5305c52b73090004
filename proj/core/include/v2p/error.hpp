#pragma once

#include <stdexcept>
#include <string>

namespace v2p {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value outside its documented domain was passed to an operation.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A byte buffer could not be decoded into a message.
class DecodeError : public Error {
 public:
  using Error::Error;
};

/// A scenario configuration (or an override applied to one) is malformed.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace v2p
