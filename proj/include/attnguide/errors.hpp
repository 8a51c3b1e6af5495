#pragma once

#include <stdexcept>
#include <string>

namespace attnguide {

// Error taxonomy used across the library. The CLI maps these onto exit codes
// (usage -> 2, numeric -> 3, io -> 4); everything else is a bug.

// Caller passed a value outside an operation's stated domain.
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Shape disagreement between tensor operands.
struct DimensionError : ParameterError {
    using ParameterError::ParameterError;
};

// An API contract was violated (e.g. backward on a non-scalar).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Non-finite values or degenerate numerics encountered at runtime.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad command-line input; carries the message shown to the user.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace attnguide
