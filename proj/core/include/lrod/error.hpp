#pragma once

#include <stdexcept>
#include <string>

namespace lrod {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A scalar argument is outside its documented domain.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// The computation graph does not support the requested derivative.
class StructuralError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace lrod
