#pragma once

#include <stdexcept>
#include <string>

namespace halo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input file or directory is missing, unreadable or malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A precondition on arguments was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A value could not be computed for a well-formed input (empty mask,
/// zero facade mass, rank deficiency ...). Callers usually skip and count.
class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace halo
