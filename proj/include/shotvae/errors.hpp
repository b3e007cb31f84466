#pragma once

#include <stdexcept>
#include <string>

namespace shotvae {

/// Tensor shapes do not line up (matmul inner dims, broadcasting, concat).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value outside the mathematical domain of an operation (log of x <= 0,
/// tau <= 0, lambda outside [0, 1], ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Misuse of an API contract that is not about shapes or values, e.g.
/// calling backward on a non-scalar.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// KL(q || p) with q_i > 0 where p_i = 0.
class InfiniteDivergenceError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// A loss component became NaN or Inf during training.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& component, double value)
      : std::runtime_error("non-finite loss component '" + component +
                           "' = " + std::to_string(value)),
        component_(component) {}
  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

/// Base class for dataset and checkpoint I/O failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace shotvae
