#pragma once

#include <stdexcept>
#include <string>

namespace semflow {

/// Raised when inputs violate a documented precondition (bad shapes, bad
/// config values, malformed files).  Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a computation fails numerically at runtime (ill-conditioned
/// transform, solver blow-up, non-finite loss).  Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

inline void ensure(bool cond, const std::string& what) {
    if (!cond) throw ValidationError(what);
}

inline void ensure_numeric(bool cond, const std::string& what) {
    if (!cond) throw NumericError(what);
}

}  // namespace semflow
