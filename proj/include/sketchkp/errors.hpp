#pragma once

#include <stdexcept>
#include <string>

namespace sketchkp {

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when an edgemap slot expects a precomputed file that is absent.
struct CacheMissError : IoError {
  explicit CacheMissError(const std::string& msg) : IoError(msg) {}
};

}  // namespace sketchkp
