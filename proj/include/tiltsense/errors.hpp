#pragma once

#include <stdexcept>
#include <string>

namespace tiltsense {

/// Machine-readable error codes surfaced through Error and mapped to CLI exit codes.
enum class Code {
  PROPRIETY_VIOLATION,
  FAMILY_MISMATCH,
  GRID_TOO_NARROW,
  Q_OUT_OF_RANGE,
  ALPHA_UNSOLVED,
  RHO_OUT_OF_RANGE,
  NO_BRACKET,
  SEPARATION_DETECTED,
  DEGENERATE_FIT,
  EMPTY_STRATUM,
  SCHEMA_VIOLATION,
  INVARIANT_VIOLATION,
  USAGE,
  DATA,
  INTERNAL,
};

const char* code_name(Code c);

class Error : public std::runtime_error {
 public:
  Error(Code code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

[[noreturn]] inline void fail(Code code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace tiltsense
