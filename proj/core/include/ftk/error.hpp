#pragma once

#include <stdexcept>
#include <string>

namespace ftk {

// Base for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
  public:
    using Error::Error;
};

class ValueError : public Error {
  public:
    using Error::Error;
};

class DTypeError : public Error {
  public:
    using Error::Error;
};

// Raised for unusable configs, datasets, or manifests (CLI exit 2).
class ConfigError : public Error {
  public:
    using Error::Error;
};

class DataError : public ConfigError {
  public:
    using ConfigError::ConfigError;
};

class IoError : public Error {
  public:
    using Error::Error;
};

// Non-finite loss or gradient (CLI exit 3).
class DivergenceError : public Error {
  public:
    using Error::Error;
};

class StateError : public Error {
  public:
    using Error::Error;
};

} // namespace ftk
