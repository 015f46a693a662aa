#pragma once

#include <stdexcept>
#include <string>

namespace hiergeo {

// Invalid configuration or option values. CLI exit code 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing or malformed input data, failed lookups. CLI exit code 2.
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem and other runtime failures. CLI exit code 1.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hiergeo
