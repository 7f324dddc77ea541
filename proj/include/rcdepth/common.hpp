#pragma once

#include <stdexcept>
#include <string>

namespace rcdepth {

// Error taxonomy used across the library. Every failure mode maps onto one
// of these so callers (and the CLI) can translate them into exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration value (non-divisible sizes, bad rates, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Input data violates a documented invariant (degenerate cloud, empty mask, ...).
struct DataError : Error {
    using Error::Error;
};

// Operation called in the wrong order (e.g. backward before forward).
struct StateError : Error {
    using Error::Error;
};

// Violated operation precondition (empty key set, N <= k, ...).
struct PreconditionError : Error {
    using Error::Error;
};

// Filesystem / serialization failure.
struct FileError : Error {
    using Error::Error;
};

}  // namespace rcdepth
