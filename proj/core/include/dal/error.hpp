#pragma once

#include <stdexcept>
#include <string>

namespace dal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or dimension mismatches.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity reached a value that must stay finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Arguments outside an operation's contract (ranges, sizes, ordering).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed files: configs, checkpoints, CSV, instance files.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace dal
