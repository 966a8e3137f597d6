#pragma once

#include <stdexcept>
#include <string>

namespace laduree {

// Error taxonomy. The CLI maps each family to its exit code:
// ValidationError -> 1, RuntimeError -> 2, CorruptInputError -> 3.

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class OutOfRangeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class LookupError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateInputError : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

class TrainingDivergedError : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

class CorruptInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace laduree
