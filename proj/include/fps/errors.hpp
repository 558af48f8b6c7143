#pragma once

#include <stdexcept>
#include <string>

namespace fps {

// Input data failed validation: bad file, shape mismatch, invariant violation.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Optimization produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fps
