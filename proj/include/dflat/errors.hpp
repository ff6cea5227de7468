#pragma once

#include <stdexcept>
#include <string>

namespace dflat {

// Error taxonomy maps onto process exit codes:
//   check failure -> 1, config/shape/resource -> 2, I/O -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : ConfigError {
    explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

struct ResourceError : ConfigError {
    explicit ResourceError(const std::string& msg) : ConfigError(msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training divergence (non-finite loss). Treated as a check failure.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr int exit_ok = 0;
inline constexpr int exit_check_failed = 1;
inline constexpr int exit_config_error = 2;
inline constexpr int exit_io_error = 3;

}  // namespace dflat
