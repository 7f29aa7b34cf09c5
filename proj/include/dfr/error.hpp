#pragma once

#include <stdexcept>
#include <string>

namespace dfr {

// Bad input: malformed config, out-of-range parameter, wrong shape. Maps to CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Environment or state failure: missing checkpoint, I/O error, corrupt file. Maps to CLI exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

// A model component was used before weights were loaded or explicitly initialized.
class ProviderNotLoaded : public RuntimeFailure {
 public:
  explicit ProviderNotLoaded(const std::string& component)
      : RuntimeFailure("provider not loaded: " + component) {}
};

}  // namespace dfr
