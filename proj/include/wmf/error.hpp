#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wmf {

enum class ErrorKind {
  Shape,      // extents disagree
  Config,     // invalid configuration value
  Input,      // caller-supplied data violates a precondition
  Placement,  // watermark does not fit the canvas
  Numeric,    // NaN or Inf encountered
  Graph,      // misuse of the autodiff tape
  Io,         // filesystem or codec failure
  Format,     // malformed checkpoint / manifest
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace wmf
