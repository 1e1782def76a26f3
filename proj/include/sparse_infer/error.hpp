#pragma once

#include <stdexcept>
#include <string>

namespace sparse_infer {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed sparse structure, bad order tag, out-of-range node index.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Incompatible extents between tensors, filters, or layers.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid user-supplied parameter (density, pool size, strategy, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace sparse_infer
