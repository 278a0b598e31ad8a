#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace trackeval {

enum class ErrorCode {
  OutOfRange,
  Degenerate,
  Parse,
  NonMonotonicTimestamps,
  BadQuaternion,
  UnsupportedFormat,
  CorruptHeader,
  Io,
  Empty,
  NoResponse,
  Timeout,
  InsufficientExcitation,
  NoOverlap,
  NotConverged,
  TooShort,
  InsufficientData,
  TooSmall,
  BadAxisMap,
  ConstantInput,
  BadSpec,
};

std::string_view to_string(ErrorCode code);

// Every failure in the library is reported as an Error. Readers attach the
// 1-based line number of the offending row (0 when not applicable).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::size_t line = 0);

  ErrorCode code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::size_t line_;
};

}  // namespace trackeval
