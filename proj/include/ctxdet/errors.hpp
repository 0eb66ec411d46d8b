#pragma once

#include <stdexcept>
#include <string>

namespace ctxdet {

// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user configuration: unknown keys, invalid parameter values,
// rules referencing unknown categories. CLI exit code 2.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Bad input data: parse failures, dangling references, out-of-range
// values, mask decode problems. CLI exit code 3.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// A pipeline stage failed while running (e.g. diverging training,
// infeasible synthetic placement). CLI exit code 4.
class StageError : public Error {
public:
    explicit StageError(const std::string& msg) : Error(msg) {}
};

} // namespace ctxdet
