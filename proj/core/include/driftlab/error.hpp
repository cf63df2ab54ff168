// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace driftlab {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad parameter ranges, unknown options, missing columns.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent data: parse failures, label violations, shape mismatches.
class DataError : public Error {
public:
    using Error::Error;
};

/// Dimension mismatch between operands.
class DimensionError : public DataError {
public:
    using DataError::DataError;
};

/// A computation produced a non-finite value or cannot proceed numerically.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace driftlab
