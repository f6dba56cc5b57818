#pragma once

#include <stdexcept>
#include <string>

namespace ssm {

// Numerical failures that callers may recover from (fallback paths, zero
// weights, ...). Precondition violations use std::invalid_argument instead.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonPositiveDefiniteError : NumericalError {
    using NumericalError::NumericalError;
};

struct SingularObservationError : NumericalError {
    using NumericalError::NumericalError;
};

// Every stage-one or stage-two weight vanished at some time step.
struct FilterCollapseError : NumericalError {
    using NumericalError::NumericalError;
};

struct UndefinedCarError : NumericalError {
    using NumericalError::NumericalError;
};

// A map produced non-finite values on the sigma points.
struct PropagationError : NumericalError {
    using NumericalError::NumericalError;
};

struct FilterDivergenceError : NumericalError {
    using NumericalError::NumericalError;
};

} // namespace ssm
