#pragma once

#include <stdexcept>
#include <string>

namespace specloop {

enum class ErrorCode {
  config,
  io,
  no_gap_found,
  multiple_gaps,
  kind_mismatch,
  no_fenced_block,
  empty_block,
  missing_placeholder,
  unsupported_verdict,
  template_error,
  transport,
  context_overflow,
  fixture_miss,
  storage,
  manifest,
  no_data,
  arm_missing,
  zero_initial_tokens,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return "config";
    case ErrorCode::io: return "io";
    case ErrorCode::no_gap_found: return "no_gap_found";
    case ErrorCode::multiple_gaps: return "multiple_gaps";
    case ErrorCode::kind_mismatch: return "kind_mismatch";
    case ErrorCode::no_fenced_block: return "no_fenced_block";
    case ErrorCode::empty_block: return "empty_block";
    case ErrorCode::missing_placeholder: return "missing_placeholder";
    case ErrorCode::unsupported_verdict: return "unsupported_verdict";
    case ErrorCode::template_error: return "template_error";
    case ErrorCode::transport: return "transport";
    case ErrorCode::context_overflow: return "context_overflow";
    case ErrorCode::fixture_miss: return "fixture_miss";
    case ErrorCode::storage: return "storage";
    case ErrorCode::manifest: return "manifest";
    case ErrorCode::no_data: return "no_data";
    case ErrorCode::arm_missing: return "arm_missing";
    case ErrorCode::zero_initial_tokens: return "zero_initial_tokens";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace specloop
