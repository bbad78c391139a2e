#pragma once

#include <stdexcept>
#include <string>

namespace rsnet {

// Exception hierarchy. The CLI maps each family onto an exit code:
// UsageError -> 2, DataError -> 3, NumericError -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Bad, missing or corrupt files and datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a forward op or a diverging loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rsnet
