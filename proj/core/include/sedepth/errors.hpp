#pragma once

#include <stdexcept>
#include <string>

namespace sedepth {

/// Base of every exception thrown by the library. `category()` is a short
/// stable token the CLI prints as a machine-parsable reason prefix.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* category() const noexcept { return "error"; }
};

class ShapeError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "shape"; }
};

/// Invalid configuration value, unknown key, or config/checkpoint mismatch.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what) : Error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }
    const char* category() const noexcept override { return "config"; }

private:
    std::string field_;
};

/// Missing, unreadable, or corrupt data on disk.
class DataError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "data"; }
};

/// Non-finite values produced during optimization or inference.
class NumericError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "numeric"; }
};

}  // namespace sedepth
