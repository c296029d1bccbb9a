#pragma once

#include <stdexcept>
#include <string>

namespace cmlm {

// Bad user-facing configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A pipeline stage failed (CLI exit code 3).
struct StageError : std::runtime_error {
  StageError(std::string stage_name, const std::string& msg)
      : std::runtime_error(stage_name + ": " + msg), stage(std::move(stage_name)) {}
  std::string stage;
};

// Bad input data (empty corpus, malformed file).
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cmlm
