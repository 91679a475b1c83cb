#pragma once

#include <stdexcept>
#include <string>

namespace tmle {

// Estimated probability hit zero where positivity is required.
struct PositivityError : std::runtime_error {
  explicit PositivityError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value encountered where finiteness is guaranteed by contract.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Root finder was given endpoints without a sign change.
struct BracketError : std::runtime_error {
  explicit BracketError(const std::string& what) : std::runtime_error(what) {}
};

// A density self-check (integral of 1) failed.
struct QuadratureError : std::runtime_error {
  explicit QuadratureError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file or command line.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tmle
