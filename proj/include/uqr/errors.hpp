#pragma once

#include <stdexcept>
#include <string>

namespace uqr {

// Shape/dimension disagreement between operands.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Value outside an operation's mathematical domain (log of a non-positive
// number, division by zero, ...).
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse: wrong mode string, non-scalar loss, invalid hyperparameter.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Inconsistent or unknown configuration keys/values.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input file (JSON syntax, tensor file header, ...).
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Structurally valid file missing a required field; message names the field.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite value surfaced during training; message names the loss component.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace uqr
