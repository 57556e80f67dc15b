#pragma once

#include <stdexcept>
#include <string>

namespace bolt {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid arguments or malformed domain objects (bad shapes, empty inputs,
/// out-of-range hyperparameters, duplicate tensor names, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Malformed container files: bad magic, truncated payload, manifest issues.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Two containers that should describe the same architecture disagree on
/// their (name, shape) layer sets.
class ArchitectureError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or numerically degenerate inputs (all-zero stacks,
/// exploding gradients).
class NumericError : public Error {
public:
    using Error::Error;
};

/// Filesystem failures while reading or writing artifacts.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace bolt
