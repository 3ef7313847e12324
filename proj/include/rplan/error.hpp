#pragma once

#include <stdexcept>
#include <string>

namespace rplan {

// Base for every error raised by the library. CLI maps these onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape/width mismatch between two inputs (probe vs. features, directions vs. model, ...).
class DimensionError : public Error {
public:
    using Error::Error;
};

// An argument or dataset violates an operation's precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

// Bad or missing configuration (CLI flags, config documents, report files).
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace rplan
