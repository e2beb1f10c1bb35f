#pragma once

#include <stdexcept>
#include <string>

namespace flowdup {

// Shape or length disagreement between operands.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A reduction or set operation received zero rows.
struct EmptyBatchError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Class label outside [0, C).
struct LabelError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Violated precondition of an internal API.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Invalid configuration or federation composition.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of a closed-form expression.
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EvaluationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN or Inf detected in trained parameters.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace flowdup
