#pragma once

#include <stdexcept>
#include <string>

namespace segnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Extent or rank disagreement between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid argument value (bad rate, out-of-range label, ...).
class ValueError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf produced by a forward op.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Misuse of the autodiff tape (stale node, non-scalar loss).
class TapeError : public Error {
public:
    using Error::Error;
};

/// File-system, decode or format failures.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace segnet
