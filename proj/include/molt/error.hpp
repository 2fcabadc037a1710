#pragma once

#include <stdexcept>
#include <string>

namespace molt {

// Error taxonomy used across the library. The CLI maps each class to a
// distinct exit code.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/rank mismatches between tensors or grids.
struct DimensionError : Error {
    using Error::Error;
};

// Argument values outside their documented domain (eps <= 0, tau out of
// range, zero resize target, ...).
struct ParameterError : Error {
    using Error::Error;
};

// API misuse: non-scalar loss handed to backward, empty attention stack, ...
struct ContractError : Error {
    using Error::Error;
};

// Malformed manifest, run-config, records, dump or checkpoint content.
struct ParseError : Error {
    using Error::Error;
};

// Unsupported or corrupt image data.
struct DecodeError : Error {
    using Error::Error;
};

// Filesystem failures; messages include the offending path.
struct IoError : Error {
    using Error::Error;
};

// Degenerate collapse during clustering self-supervision.
struct TrainingError : Error {
    using Error::Error;
};

}  // namespace molt
