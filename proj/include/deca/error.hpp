#pragma once

#include <stdexcept>
#include <string>

namespace deca {

/// Failure categories. The CLI prints the category as the first token of its
/// one-line error report, so these strings are part of the external interface.
enum class ErrorKind {
  Dimension,
  Contract,
  Numeric,
  Config,
  Degenerate,
  Geometry,
  Data,
  Io,
  TruncatedBlob,
  VersionMismatch,
  ShapeMismatch,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  const char* category() const noexcept { return to_string(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace deca
