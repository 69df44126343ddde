#pragma once

#include <stdexcept>
#include <string>

namespace moai {

// Error taxonomy. The CLI maps these to exit codes: anything derived from
// InputError exits 2, InternalError exits 3.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : InputError {
    using InputError::InputError;
};
struct ConfigError : InputError {
    using InputError::InputError;
};
struct ValidationError : InputError {
    using InputError::InputError;
};
struct UsageError : InputError {
    using InputError::InputError;
};
struct IndexError : InputError {
    using InputError::InputError;
};
struct GenerationError : InputError {
    using InputError::InputError;
};
struct IoError : InputError {
    using InputError::InputError;
};

struct InternalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Frozen-parameter hash mismatch, non-finite values and other corrupted state.
struct CorruptionError : InternalError {
    using InternalError::InternalError;
};

}  // namespace moai
