#pragma once

#include <stdexcept>
#include <string>

namespace ivimlab {

// Base class for every error caused by bad input (files, arguments, shapes).
// The CLI maps these to exit code 2; anything else is an internal failure.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Grids or lengths that must agree do not.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Argument outside its documented domain (empty list, bad enum name, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Malformed file content. The message names the offending field.
class FormatError : public Error {
public:
    using Error::Error;
};

class UnsupportedTypeError : public FormatError {
public:
    using FormatError::FormatError;
};

// Text that could not be parsed into numbers; carries the token position.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t position)
        : Error(what), position_(position) {}
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

class IoError : public Error {
public:
    using Error::Error;
};

// A quantity that is mathematically undefined for the given input
// (CV of a zero-mean sample, Hausdorff distance to an empty set, ...).
class UndefinedError : public Error {
public:
    using Error::Error;
};

}  // namespace ivimlab
