#pragma once

#include <stdexcept>
#include <string>

namespace ict {

// Contract violation in an operation (shape mismatch, bad argument).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or inconsistent experiment configuration. Maps to CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite value encountered during training. Maps to CLI exit code 3.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace ict
