#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace msca {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Hyperparameters or block configuration are invalid.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data violates a documented precondition (empty mask, degenerate box, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. calling backward() on a non-scalar.
class ContractError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered during training or a failed numerical self-check.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// File could not be opened, read, or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

}  // namespace msca
