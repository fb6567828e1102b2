#pragma once

#include <stdexcept>
#include <string>

namespace frontflow {

// Values line up with the C API status codes and, for the first group, with
// the CLI exit codes.
enum class ErrorCode : int {
  Generic = 1,
  Config = 2,
  Numerical = 3,
  NonConvergence = 4,
  Io = 5,
  Parse = 6,
  Validation = 7,
  InvalidArgument = 8,
  Format = 9,
  Checksum = 10,
  ShapeMismatch = 11,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace frontflow
