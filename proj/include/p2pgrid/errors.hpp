#pragma once

#include <stdexcept>
#include <string>

namespace p2pgrid {

/// Raised when an input violates a documented precondition (malformed
/// utility parameters, negative powers, inconsistent dimensions).
class DomainError : public std::invalid_argument {
 public:
  explicit DomainError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when a solve that must succeed by construction does not.
class InternalError : public std::runtime_error {
 public:
  explicit InternalError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a file cannot be opened, read or written.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace p2pgrid
