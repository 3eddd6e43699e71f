#pragma once

#include <stdexcept>
#include <string>

namespace motion3d {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that are malformed or do not agree between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A layer/kernel configuration that cannot produce a valid output.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Label or element index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Misuse of an API contract (e.g. backward from a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Corrupt or truncated on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during training or verification.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration (unknown key, bad value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace motion3d
