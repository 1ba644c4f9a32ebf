#pragma once

#include <stdexcept>
#include <string>

namespace tracetrust {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad magic, unknown version or dtype, malformed JSON documents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Payload shorter than its header promises.
class TruncationError : public Error {
 public:
  using Error::Error;
};

/// A value or document violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Open/read/write failures on files and streams.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Caller-supplied arguments outside an operation's domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

}  // namespace tracetrust
