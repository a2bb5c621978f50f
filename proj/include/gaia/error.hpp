// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace gaia {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad graph, bad flags, shape mismatch between declared pieces.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent input data (archives, score files, non-finite values).
class DataError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. running backward twice on one tape.
class UsageError : public Error {
public:
    using Error::Error;
};

} // namespace gaia
