#ifndef NDFILTER_ERROR_HPP
#define NDFILTER_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ndf {

/// Base for every error raised on bad input data or model files. The CLI maps
/// these to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t byte_offset)
        : DataError(what), offset_(byte_offset) {}
    std::size_t byte_offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class MissingFieldError : public DataError {
public:
    explicit MissingFieldError(std::string field)
        : DataError("missing field \"" + field + "\""), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Value outside its mathematical or configured domain.
class DomainError : public DataError {
public:
    using DataError::DataError;
};

class ShapeError : public DataError {
public:
    using DataError::DataError;
};

// Checkpoint failures, one type per failure mode.
class CheckpointVersionError : public DataError {
public:
    using DataError::DataError;
};

class CheckpointTruncatedError : public DataError {
public:
    using DataError::DataError;
};

class CheckpointShapeError : public ShapeError {
public:
    using ShapeError::ShapeError;
};

/// Non-finite loss or parameter during training.
class NumericError : public DataError {
public:
    using DataError::DataError;
};

}  // namespace ndf

#endif
