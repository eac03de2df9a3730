#pragma once

#include <stdexcept>
#include <string>

namespace ucgs {

/// Index outside the bounds of a panel or table.
class BoundsError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Caller supplied arguments that violate an operation's preconditions.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An enumeration or allocation would exceed its configured budget.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Object used in a state it does not support (e.g. decoder prefix overflow).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Procedural generation failed after its retry budget.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values appeared during optimisation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LoadErrorKind {
  kVersionMismatch,
  kMissingFile,
  kChecksumFailure,
  kMalformed,
  kHashMismatch,
};

inline const char* to_string(LoadErrorKind kind) {
  switch (kind) {
    case LoadErrorKind::kVersionMismatch: return "version mismatch";
    case LoadErrorKind::kMissingFile: return "missing file";
    case LoadErrorKind::kChecksumFailure: return "checksum failure";
    case LoadErrorKind::kMalformed: return "malformed content";
    case LoadErrorKind::kHashMismatch: return "config hash mismatch";
  }
  return "unknown";
}

/// Failure to load a persisted artifact (dataset or checkpoint).
class LoadError : public std::runtime_error {
 public:
  LoadError(LoadErrorKind kind, std::string path, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + path +
                           (detail.empty() ? "" : " (" + detail + ")")),
        kind_(kind),
        path_(std::move(path)) {}

  LoadErrorKind kind() const noexcept { return kind_; }
  const std::string& path() const noexcept { return path_; }

 private:
  LoadErrorKind kind_;
  std::string path_;
};

}  // namespace ucgs
