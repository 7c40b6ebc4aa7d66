#pragma once

#include <stdexcept>
#include <string>

namespace biax {

// Shape or dimension mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller violated an operation's precondition (e.g. backward on a non-scalar).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// NaN/Inf encountered where finite values are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid or infeasible configuration (conv stacks, filter cutoffs, run configs).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed on-disk data.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A metric is not defined for the given scores (e.g. only one class present).
struct MetricUndefinedError : std::domain_error {
  using std::domain_error::domain_error;
};

}  // namespace biax
