#pragma once

#include <stdexcept>
#include <string>

namespace semnav {

// Configuration problems: unknown keys, malformed values, out-of-range
// settings.  The command-line driver maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Optimization produced a non-finite or absurdly large loss/parameter.
// Mapped to exit code 3.
class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& what)
      : std::runtime_error(what) {}
};

// File I/O failures: missing files, short reads, bad magic bytes.  Mapped to
// exit code 4.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace semnav
