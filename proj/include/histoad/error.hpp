#pragma once

#include <stdexcept>
#include <string>

namespace histoad {

enum class ErrorCode {
  invalid_input,
  io,
  config,
  bad_magic,
  unsupported_version,
  dim_mismatch,
  truncated_payload,
  malformed_metadata,
  undefined_similarity,
  single_class,
  numeric,
};

const char* to_string(ErrorCode code);

/// Every library failure is reported through this exception; `code()` lets
/// callers (and the CLI exit-code mapping) distinguish the cases.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace histoad
