#pragma once

#include <stdexcept>
#include <string>

namespace imix {

// Base of every error raised by the library. The CLI maps the "validation"
// family (config, label, ingest, shape) to exit code 1 and everything else
// to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Misuse of a stateful API (missing cache, absent head, uninitialised shadow).
class UsageError : public Error {
 public:
  using Error::Error;
};

class IngestError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace imix
