#pragma once

#include <stdexcept>
#include <string>

namespace mgb {

// Invalid configuration (bad hyper-parameters, infeasible spec). CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or missing input files. CLI exit code 3.
struct IngestError : std::runtime_error {
    explicit IngestError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values produced by a numeric computation. CLI exit code 4.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mgb
