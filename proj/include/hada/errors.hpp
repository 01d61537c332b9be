#pragma once

#include <stdexcept>
#include <string>

namespace hada {

// Base for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension disagreements.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration or usage contract violation.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// File format / serialization problems.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Non-finite values, degenerate inputs and other numerical failures.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace hada
