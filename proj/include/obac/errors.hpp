#pragma once

#include <stdexcept>
#include <string>

namespace obac {

/// Error classes surfaced by the library. The numeric value doubles as the
/// C API status code and the CLI exit code.
enum class ErrorKind : int {
  config = 2,
  io = 3,
  format = 4,
  numeric = 5,
  state = 6,
  dimension = 7,
  lookup = 8,
  coverage = 9,
  internal = 10,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorKind::format, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::numeric, w) {}
};
struct StateError : Error {
  explicit StateError(const std::string& w) : Error(ErrorKind::state, w) {}
};
struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorKind::dimension, w) {}
};
struct LookupError : Error {
  explicit LookupError(const std::string& w) : Error(ErrorKind::lookup, w) {}
};
struct CoverageError : Error {
  explicit CoverageError(const std::string& w) : Error(ErrorKind::coverage, w) {}
};

}  // namespace obac
