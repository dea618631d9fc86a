#pragma once

#include <stdexcept>
#include <string>

namespace prefmod {

// Base for all library errors. The CLI maps each subclass to its own exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

// Container version mismatch or checksum failure.
class FormatError : public DataError {
public:
    using DataError::DataError;
};

// Non-finite values in a forward pass, diverged training, ...
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace prefmod
