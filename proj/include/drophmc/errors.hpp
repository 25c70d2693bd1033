#pragma once

#include <stdexcept>

namespace drophmc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatch between parameters, features, labels or masks.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf appeared in parameters, inputs or an integrator state.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Unreadable or malformed input files, inconsistent datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace drophmc
