#pragma once

#include <stdexcept>
#include <string>

namespace egosag {

// Bad argument values (counts, sizes, thresholds out of range).
class ParameterError : public std::invalid_argument {
 public:
  explicit ParameterError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Inputs that are structurally valid but outside the operation's domain
// (empty scene, non-finite data, dead level in the backbone).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Configuration problems: unknown keys, bad types, invalid values.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File and format problems. `kind` distinguishes the failure classes that
// callers need to tell apart.
class DataError : public std::runtime_error {
 public:
  enum class Kind { MissingFile, VersionMismatch, ConfigHashMismatch, Corrupt };
  DataError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Training diverged (non-finite loss) or another numeric invariant broke.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Internal consistency failures that indicate a bug rather than bad input.
class InternalError : public std::logic_error {
 public:
  explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace egosag
