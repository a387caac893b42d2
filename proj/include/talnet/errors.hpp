#pragma once

#include <stdexcept>
#include <string>

namespace talnet {

// Operand shapes do not fit the operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration or argument values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A file on disk does not follow its documented layout.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A checkpoint was written under a different configuration.
class DigestMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace talnet
