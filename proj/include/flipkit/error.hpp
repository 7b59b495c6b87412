#pragma once

#include <stdexcept>
#include <string>

namespace flipkit {

/// Input that cannot be parsed at all (bad JSON, bad binary header).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed input that violates a structural contract.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while running a computation (divergence, unreachable encoder, I/O).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace flipkit
