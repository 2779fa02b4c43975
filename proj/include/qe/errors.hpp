#pragma once

#include <stdexcept>
#include <string>

namespace qe {

// Exit-code contract shared with the CLI: usage errors exit 1, data errors
// exit 2, numeric failures exit 3.
enum class ErrorCategory { usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

// Violated precondition on an operation (bad axis, non-scalar backward,
// architecture mismatch, ...).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& message)
        : Error(ErrorCategory::usage, message) {}
};

// Tensor dimension disagreement; the message names the offending shapes.
class ShapeError : public ContractError {
public:
    explicit ShapeError(const std::string& message) : ContractError(message) {}
};

// Input that is structurally valid but mathematically degenerate: zero vector
// in a cosine, all-pad pooling mask, zero-variance labels or predictions.
class DegenerateInputError : public Error {
public:
    explicit DegenerateInputError(const std::string& message)
        : Error(ErrorCategory::data, message) {}
};

// File and content problems: missing files, malformed rows, bad UTF-8.
class DataError : public Error {
public:
    explicit DataError(const std::string& message)
        : Error(ErrorCategory::data, message) {}
};

// Checkpoint-specific failures, each with its own type so callers can react
// to version skew, manifest corruption and truncation separately.
class CheckpointError : public DataError {
public:
    explicit CheckpointError(const std::string& message) : DataError(message) {}
};

class CheckpointVersionError : public CheckpointError {
public:
    explicit CheckpointVersionError(const std::string& message)
        : CheckpointError(message) {}
};

class CheckpointShapeError : public CheckpointError {
public:
    explicit CheckpointShapeError(const std::string& message)
        : CheckpointError(message) {}
};

class CheckpointTruncatedError : public CheckpointError {
public:
    explicit CheckpointTruncatedError(const std::string& message)
        : CheckpointError(message) {}
};

// Non-finite loss or related numeric breakdown during training.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& message)
        : Error(ErrorCategory::numeric, message) {}
};

}  // namespace qe
