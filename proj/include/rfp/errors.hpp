#pragma once

#include <stdexcept>
#include <string>

namespace rfp {

/// Raised when a well-posedness condition fails (e.g. an initial-wealth
/// threshold is crossed at some finite horizon). CLI maps this to exit code 2.
struct ConditionError : std::runtime_error {
  explicit ConditionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when an iterative solver cannot reach its tolerance or detects an
/// unbounded problem. CLI maps this to exit code 3.
struct SolverError : std::runtime_error {
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised on file-system failures (unwritable output dir, missing config).
/// CLI maps this to exit code 4.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rfp
