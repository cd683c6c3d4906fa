#pragma once

#include <stdexcept>
#include <string>

namespace stockpot {

// Base class for all toolkit errors.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed container files: bad header, bad offsets, unknown dtype,
// duplicate names. Message names the offending tensor where one exists.
class ParseError : public Error {
  public:
    using Error::Error;
};

// Schema incompatibilities between checkpoints (names, shapes, dtypes).
class SchemaError : public Error {
  public:
    using Error::Error;
};

// Numeric preconditions violated: degenerate units where an angle is
// required, invalid synthetic specs, out-of-range parameters.
class NumericError : public Error {
  public:
    using Error::Error;
};

// Filesystem failures while reading or writing artifacts.
class IoError : public Error {
  public:
    using Error::Error;
};

}  // namespace stockpot
