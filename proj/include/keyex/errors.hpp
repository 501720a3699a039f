#pragma once

#include <stdexcept>
#include <string>

namespace keyex {

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shape or rank mismatch between tensors.
struct DimensionError : Error {
    using Error::Error;
};

// NaN/Inf values, zero-vector normalization, diverging losses.
struct NumericError : Error {
    using Error::Error;
};

// Bad arguments or malformed domain data (empty corpus, invalid distribution, ...).
struct ValidationError : Error {
    using Error::Error;
};

// Malformed input file contents; message carries the line number where known.
struct ParseError : Error {
    using Error::Error;
};

// Invalid or unknown configuration keys/values.
struct ConfigError : Error {
    using Error::Error;
};

// Bad command-line usage (unknown flag or subcommand).
struct UsageError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace keyex
