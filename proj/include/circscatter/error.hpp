#pragma once

#include <stdexcept>
#include <string>

namespace circscatter {

/// Failure categories. The CLI maps them onto process exit codes.
enum class ErrorCode {
  InvalidGrid,
  InvalidConfig,
  DegenerateShape,
  SamplingStuck,
  LayoutMismatch,
  LayoutMissing,
  ShapeMismatch,
  TooSmall,
  InvalidLevel,
  InvalidSpec,
  Parse,
  NonFinite,
  StaleCache,
  Io,
};

enum class ErrorCategory { Validation, Numeric, Io };

constexpr ErrorCategory category_of(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonFinite:
    case ErrorCode::DegenerateShape:
    case ErrorCode::SamplingStuck:
      return ErrorCategory::Numeric;
    case ErrorCode::Io:
    case ErrorCode::Parse:
      return ErrorCategory::Io;
    default:
      return ErrorCategory::Validation;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace circscatter
