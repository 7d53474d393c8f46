#pragma once

#include <stdexcept>
#include <string>

namespace actrec {

/// Bad configuration or command-line usage (CLI exit code 1).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input data or a violated data invariant (CLI exit code 2).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace actrec
