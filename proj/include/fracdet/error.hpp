#pragma once

#include <stdexcept>
#include <string>

namespace fracdet {

enum class ErrorCode {
  kInvalidArgument = 1,
  kDecode,
  kFormat,
  kDegenerateHistogram,
  kDiverged,
  kIo,
  kNotLoaded,
  kInternal,
};

const char* error_code_name(ErrorCode code);

// All library failures are reported through this exception type; the C API
// maps `code()` onto its status enum.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void throw_invalid(const std::string& what) {
  throw Error(ErrorCode::kInvalidArgument, what);
}

}  // namespace fracdet
