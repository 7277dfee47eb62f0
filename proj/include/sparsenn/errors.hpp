#pragma once

#include <stdexcept>
#include <string>

namespace sparsenn {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad experiment config, unknown key, or malformed input file. CLI exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// A data or checkpoint file could not be parsed.
struct ParseError : ConfigError {
    using ConfigError::ConfigError;
};

// Tensor shape or fixed-point format mismatch.
struct ShapeError : Error {
    using Error::Error;
};

// The network does not fit the modeled hardware limits. CLI exit code 4.
struct CapacityError : Error {
    using Error::Error;
};

// Non-finite loss during training. CLI exit code 3.
struct DivergenceError : Error {
    using Error::Error;
};

// The simulation exceeded its cycle cap; message carries a router-state dump.
struct DeadlockError : Error {
    using Error::Error;
};

} // namespace sparsenn
