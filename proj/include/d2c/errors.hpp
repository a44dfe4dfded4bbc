#pragma once

#include <stdexcept>
#include <string>

namespace d2c {

/// Raised when a precondition on an argument is violated.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a loss, gradient or parameter becomes non-finite. Training
/// halts on this error; partial artifacts are kept.
class PoisonError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration could not be parsed or failed validation. `where` names the
/// offending field or line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(where) {}

  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

/// Checkpoint format version does not match this build.
class VersionError : public std::runtime_error {
 public:
  VersionError(unsigned found, unsigned expected)
      : std::runtime_error("checkpoint version " + std::to_string(found) +
                           " is not supported (expected " +
                           std::to_string(expected) + ")"),
        found_(found),
        expected_(expected) {}

  unsigned found() const noexcept { return found_; }
  unsigned expected() const noexcept { return expected_; }

 private:
  unsigned found_;
  unsigned expected_;
};

/// An iterative numerical routine failed to converge.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace d2c
