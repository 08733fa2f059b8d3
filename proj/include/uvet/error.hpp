#pragma once

#include <stdexcept>
#include <string>

namespace uvet {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
struct DimensionError : Error {
    using Error::Error;
};

// Non-finite values, non-PSD covariance, zero norms where forbidden.
struct NumericError : Error {
    using Error::Error;
};

// API misuse: consumed tape, empty input lists, too few seeds/samples.
struct UsageError : Error {
    using Error::Error;
};

// Invalid configuration values or unknown config keys.
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem failures.
struct IoError : Error {
    using Error::Error;
};

// Malformed file contents (checkpoint magic, PNM headers, JSON schema).
struct FormatError : Error {
    using Error::Error;
};

// Statistic undefined on this input (constant vector, all-zero differences,
// empty corpus, no positive predictions/labels).
struct DegenerateError : Error {
    using Error::Error;
};

}  // namespace uvet
