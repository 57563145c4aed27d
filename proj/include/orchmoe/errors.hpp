#pragma once

#include <stdexcept>
#include <string>

namespace orchmoe {

// Exit codes used by the CLI: 0 success, 2 validation, 3 numerical, 4 IO.
enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 2,
  kExitNumerical = 3,
  kExitIo = 4,
};

// Shape/dimension mismatch between tensors.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated precondition (bad argument, missing state).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, divergence, failed numerical checks.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// File or format failures; message carries the path or byte offset.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace orchmoe
