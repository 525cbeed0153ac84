#pragma once

#include <stdexcept>
#include <string>

namespace idmm {

// Shape/contract violations (bad dimensions, out-of-range ids).
class DimError : public std::invalid_argument {
public:
    explicit DimError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Invalid parameter values (alpha <= 0, empty range, ...).
class ParamError : public std::invalid_argument {
public:
    explicit ParamError(const std::string& msg) : std::invalid_argument(msg) {}
};

// NaN/Inf encountered where finite values are required.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or truncated files.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failures, carries the offending path in the message.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Config schema violations, carries the field path.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace idmm
