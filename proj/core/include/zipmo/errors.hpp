#pragma once

#include <stdexcept>
#include <string>

namespace zipmo {

/// Base class for every error raised by the library. Callers that only care
/// about "something went wrong" catch this; the CLI maps subclasses to exit
/// codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RangeError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class CapacityError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
class LayoutError : public Error { using Error::Error; };
class UnsupportedError : public Error { using Error::Error; };

/// A file or directory the caller referenced does not exist.
class MissingFileError : public Error { using Error::Error; };

/// Schema violation in a JSON document. `path` names the offending field,
/// e.g. "vae.t_c".
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace zipmo
