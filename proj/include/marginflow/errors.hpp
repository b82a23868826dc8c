#pragma once

#include <stdexcept>
#include <string>

namespace mf {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched dimensions between parameters, data, or states.
struct ShapeError : Error {
    using Error::Error;
};

// Argument outside the mathematical domain of an operation.
struct DomainError : Error {
    using Error::Error;
};

// Evaluation at or near a nondifferentiable point (ReLU kink, L1/Linf corner).
struct KinkError : Error {
    using Error::Error;
};

// Degenerate input: zero-norm layer, zero-variance batch, empty dataset.
struct DegenerateError : Error {
    using Error::Error;
};

// A norm-preserving update has no real solution for the given increment.
struct StepTooLargeError : Error {
    using Error::Error;
};

// No feasible solution exists (e.g. non-separable data in a margin solver).
struct InfeasibleError : Error {
    using Error::Error;
};

// Too few points for a requested fit or estimate.
struct InsufficientDataError : Error {
    using Error::Error;
};

// Invalid experiment configuration; message carries the offending field path.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed file input; message carries file/line context.
struct ParseError : Error {
    using Error::Error;
};

}  // namespace mf
