#pragma once

#include <stdexcept>
#include <string>

namespace tsq {

/// Base for every error raised by the library. Derived types name the
/// category so callers (and the CLI exit path) can report it.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class CapacityError : public Error {
  public:
    using Error::Error;
};

class ParameterError : public Error {
  public:
    using Error::Error;
};

class IndexError : public Error {
  public:
    using Error::Error;
};

class DimensionError : public Error {
  public:
    using Error::Error;
};

class ValidationError : public Error {
  public:
    using Error::Error;
};

class DecodeError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

} // namespace tsq
