#pragma once

#include <stdexcept>
#include <string>

namespace boxboot {

// Configuration / usage problems; the CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File-system and format problems; the CLI maps these to exit code 3.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace boxboot
