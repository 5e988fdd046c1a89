#pragma once

#include <stdexcept>
#include <string>

namespace dwpnp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters or inputs (empty sets, out-of-range settings).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Relative rotation too close to pi for a unique logarithm.
class CutLocusError : public Error {
 public:
  using Error::Error;
};

/// A point lands at or behind the camera plane.
class BehindCameraError : public Error {
 public:
  using Error::Error;
};

/// The pose problem lost rank (or every point left the view frustum).
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

/// Precondition of an experiment generator violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace dwpnp
