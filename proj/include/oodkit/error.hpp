#pragma once

#include <stdexcept>
#include <string>

namespace oodkit {

// Every failure raised by the library derives from Error so callers can catch
// one type; the subclasses exist so tests and the CLI can tell them apart.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class UnsupportedDtypeError : public FormatError {
public:
    using FormatError::FormatError;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class FitError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class BuildError : public Error {
public:
    using Error::Error;
};

class GeneratorError : public Error {
public:
    using Error::Error;
};

}  // namespace oodkit
