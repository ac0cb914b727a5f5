#pragma once

#include <stdexcept>
#include <string>

namespace graspstn {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Shape or dimension mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A forward value or gradient became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File or directory could not be read/written/parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A stored artifact (checkpoint, cache) does not match the current config.
class ArtifactMismatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace graspstn
