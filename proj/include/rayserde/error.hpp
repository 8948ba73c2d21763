// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace rayserde {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid grid spec, sector step, strategy parameters or run config.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Coordinate or key outside its admissible range.
class BoundsError : public Error {
public:
    using Error::Error;
};

/// Malformed template, snapshot or point-cloud file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Violated pre-condition between cooperating operations (shape mismatch etc).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Non-finite value produced during a numeric kernel.
class NumericError : public Error {
public:
    NumericError(const std::string& what, std::size_t step)
        : Error(what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// A size limit (memory cap, embedding length) was exceeded.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Requested element is not present.
class LookupError : public Error {
public:
    using Error::Error;
};

}  // namespace rayserde
