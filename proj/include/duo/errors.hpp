#pragma once

#include <stdexcept>
#include <string>

namespace duo {

// Raised when a caller breaks an operation's precondition (shape mismatch,
// malformed one-hot, non-positive sigma, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class SingularMatrixError : public std::runtime_error {
 public:
  SingularMatrixError(const std::string& what, double min_pivot)
      : std::runtime_error(what), min_pivot_(min_pivot) {}
  double min_pivot() const noexcept { return min_pivot_; }

 private:
  double min_pivot_;
};

class DegenerateProbabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DUO_REQUIRE(cond, msg)                                  \
  do {                                                          \
    if (!(cond)) throw ::duo::ContractViolation(std::string(msg)); \
  } while (0)

}  // namespace duo
