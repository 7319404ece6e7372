#pragma once

#include <string>
#include <utility>
#include <vector>

#include "specloop/errors.hpp"

namespace specloop {

/// Outcome of one verification attempt. Exactly the fields of the active kind
/// are populated: `parser_message` for syntax errors, `branch_labels` (the
/// open proof goals, at least one) for semantic errors.
struct Verdict {
  enum class Kind { success, syntax_error, semantic_error, tool_failure };

  Kind kind = Kind::tool_failure;
  std::string parser_message;
  std::vector<std::string> branch_labels;
  std::string raw_output;
  long long wall_time_ms = 0;

  static Verdict success(std::string raw = {}, long long ms = 0) {
    Verdict v;
    v.kind = Kind::success;
    v.raw_output = std::move(raw);
    v.wall_time_ms = ms;
    return v;
  }

  static Verdict syntax_error(std::string message, std::string raw = {}, long long ms = 0) {
    Verdict v;
    v.kind = Kind::syntax_error;
    v.parser_message = std::move(message);
    v.raw_output = std::move(raw);
    v.wall_time_ms = ms;
    return v;
  }

  static Verdict semantic_error(std::vector<std::string> labels, std::string raw = {},
                                long long ms = 0) {
    if (labels.empty())
      throw Error(ErrorCode::config, "semantic verdict requires at least one branch label");
    Verdict v;
    v.kind = Kind::semantic_error;
    v.branch_labels = std::move(labels);
    v.raw_output = std::move(raw);
    v.wall_time_ms = ms;
    return v;
  }

  static Verdict tool_failure(std::string raw = {}, long long ms = 0) {
    Verdict v;
    v.kind = Kind::tool_failure;
    v.raw_output = std::move(raw);
    v.wall_time_ms = ms;
    return v;
  }

  bool is_success() const { return kind == Kind::success; }
  bool is_error() const {
    return kind == Kind::syntax_error || kind == Kind::semantic_error;
  }

  // wall_time is timing noise, everything else is semantic content
  friend bool operator==(const Verdict& a, const Verdict& b) {
    return a.kind == b.kind && a.parser_message == b.parser_message &&
           a.branch_labels == b.branch_labels && a.raw_output == b.raw_output;
  }
};

inline const char* verdict_kind_name(Verdict::Kind kind) {
  switch (kind) {
    case Verdict::Kind::success: return "success";
    case Verdict::Kind::syntax_error: return "syntax_error";
    case Verdict::Kind::semantic_error: return "semantic_error";
    case Verdict::Kind::tool_failure: return "tool_failure";
  }
  return "unknown";
}

inline Verdict::Kind verdict_kind_from_string(const std::string& s) {
  if (s == "success") return Verdict::Kind::success;
  if (s == "syntax_error") return Verdict::Kind::syntax_error;
  if (s == "semantic_error") return Verdict::Kind::semantic_error;
  if (s == "tool_failure") return Verdict::Kind::tool_failure;
  throw Error(ErrorCode::config, "unknown verdict kind: " + s);
}

}  // namespace specloop
