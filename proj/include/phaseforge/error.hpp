#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace phaseforge {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed textual input. `position` is a token index or a 1-based line
/// number depending on the parser that raised it.
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

/// Bad toolchain templates, suite files, or other user configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Cosine distance is undefined for an all-zero vector.
class DegenerateVector : public Error {
 public:
  using Error::Error;
};

/// Raised by finalize when no top-ranked candidate survives revalidation.
class NoValidCandidate : public Error {
 public:
  using Error::Error;
};

}  // namespace phaseforge
