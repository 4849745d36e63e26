#pragma once

#include <stdexcept>
#include <string>

namespace stepfit {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input file (CSV cell, JSON schema, ...). Carries location context in the message.
struct ParseError : Error {
    using Error::Error;
};

/// Violated contract on data, descriptors or configuration.
struct ValidationError : Error {
    using Error::Error;
};

/// Numerical failure during estimation: degenerate class, likelihood underflow,
/// diverging solver, near-singular confusion matrix.
struct NumericalError : Error {
    using Error::Error;
};

}  // namespace stepfit
