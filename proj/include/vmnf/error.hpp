#pragma once

#include <stdexcept>
#include <string>

namespace vmnf {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes do not conform to an op's rules.
struct ShapeError : Error {
    using Error::Error;
};

// Input outside an op's mathematical domain (log of non-positive, T <= 0, ...).
struct DomainError : Error {
    using Error::Error;
};

// Caller broke a documented precondition.
struct ContractError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

// Non-finite value produced where the contract promises finite output.
// layer_index >= 0 when the failure happened inside a flow stack.
struct NumericError : Error {
    int layer_index = -1;
    explicit NumericError(const std::string& msg, int layer = -1)
        : Error(msg), layer_index(layer) {}
};

// Malformed external input (IDX files, checkpoints).
struct FormatError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    std::string key;
    explicit ConfigError(const std::string& msg, std::string bad_key = "")
        : Error(msg), key(std::move(bad_key)) {}
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace vmnf
