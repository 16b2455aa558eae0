#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fmow {

/// Base of every error raised by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed JSON / CSV / container text.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t byte_offset)
        : Error(what + " (at byte " + std::to_string(byte_offset) + ")"), offset_(byte_offset) {}
    explicit ParseError(const std::string& what) : Error(what), offset_(0) {}

    std::size_t byte_offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// A required field is absent or has the wrong JSON type.
class SchemaError : public Error {
public:
    explicit SchemaError(std::string field)
        : Error("schema error: missing or mistyped field '" + field + "'"), field_(std::move(field)) {}
    SchemaError(std::string field, const std::string& detail)
        : Error("schema error: field '" + field + "': " + detail), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// A value is present but violates a domain bound.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& bound)
        : Error("validation error: field '" + field + "' " + bound), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// Weights container failures. Each is a distinct type so callers can tell them apart.
class VersionMismatchError : public Error {
public:
    using Error::Error;
};

class DimensionMismatchError : public Error {
public:
    using Error::Error;
};

class TruncatedFileError : public Error {
public:
    using Error::Error;
};

/// Non-finite gradient during training; names the parameter block.
class NumericError : public Error {
public:
    NumericError(std::string block, const std::string& what)
        : Error(what + " in parameter block " + block), block_(std::move(block)) {}

    const std::string& block() const noexcept { return block_; }

private:
    std::string block_;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace fmow
