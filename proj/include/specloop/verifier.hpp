#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "specloop/errors.hpp"
#include "specloop/source_model.hpp"
#include "specloop/util.hpp"
#include "specloop/verdict.hpp"

namespace specloop {

class VerifierInterface {
 public:
  virtual ~VerifierInterface() = default;

  /// Judges one spliced draft. All failure modes come back as verdicts;
  /// this never throws for backend problems.
  virtual Verdict check(const std::string& draft_source, const AnnotationCandidate& candidate,
                        const std::string& target_method) = 0;
};

/// A regex whose `(?<name>...)` groups have been rewritten to numbered groups
/// (std::regex has no named captures). `group_of` maps names back to indices.
struct CompiledPattern {
  std::regex regex;
  std::string source;
  std::map<std::string, int> group_of;

  int group(const std::string& name) const {
    auto it = group_of.find(name);
    return it == group_of.end() ? 0 : it->second;
  }
};

inline CompiledPattern compile_pattern(const std::string& pattern) {
  CompiledPattern out;
  out.source = pattern;
  std::string rewritten;
  rewritten.reserve(pattern.size());
  int group_index = 0;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    char c = pattern[i];
    if (c == '\\' && i + 1 < pattern.size()) {
      rewritten += c;
      rewritten += pattern[++i];
      continue;
    }
    if (c == '(') {
      if (pattern.compare(i, 3, "(?<") == 0) {
        std::size_t close = pattern.find('>', i + 3);
        if (close == std::string::npos)
          throw Error(ErrorCode::config, "unterminated named group in pattern: " + pattern);
        ++group_index;
        out.group_of[pattern.substr(i + 3, close - i - 3)] = group_index;
        rewritten += '(';
        i = close;
        continue;
      }
      if (pattern.compare(i, 2, "(?") != 0) ++group_index;
    }
    rewritten += c;
  }
  try {
    out.regex = std::regex(rewritten, std::regex::ECMAScript);
  } catch (const std::regex_error& e) {
    throw Error(ErrorCode::config, "bad pattern '" + pattern + "': " + e.what());
  }
  return out;
}

/// Backend-output classification table: one pattern per verdict kind. The
/// syntax pattern is searched across the whole output (group `message` is the
/// parser message), the semantic pattern is applied per line (group `label`
/// captures one open-branch label per match), the success pattern is searched
/// per line. A data-driven table survives backend upgrades and admits any
/// JML verifier with textual output.
struct PatternTable {
  std::optional<CompiledPattern> syntax;
  std::optional<CompiledPattern> semantic;
  std::optional<CompiledPattern> success;

  /// The built-in mock grammar: `CLOSED` | `OPEN: <label>` | `PARSE: <message>`.
  static PatternTable mock_grammar() {
    PatternTable t;
    t.syntax = compile_pattern("PARSE: (?<message>.*)");
    t.semantic = compile_pattern("^OPEN: (?<label>.*)$");
    t.success = compile_pattern("^CLOSED\\s*$");
    return t;
  }

  /// Loads a table from an INI-style file with a `[syntax]`, `[semantic]` and
  /// `[success]` section, each holding `pattern = <regex>`.
  static PatternTable load(const std::filesystem::path& path) {
    PatternTable t;
    std::string section;
    for (auto& raw : split_lines(read_file(path)).lines) {
      std::string line = trim(raw);
      if (line.empty() || line[0] == '#' || line[0] == ';') continue;
      if (line.front() == '[' && line.back() == ']') {
        section = line.substr(1, line.size() - 2);
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorCode::config, "bad pattern table line: " + raw);
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key != "pattern")
        throw Error(ErrorCode::config, "unknown pattern table key: " + key);
      if (section == "syntax")
        t.syntax = compile_pattern(value);
      else if (section == "semantic")
        t.semantic = compile_pattern(value);
      else if (section == "success")
        t.success = compile_pattern(value);
      else
        throw Error(ErrorCode::config, "unknown pattern table section: " + section);
    }
    return t;
  }
};

/// Maps raw backend output to a verdict. Total: every (exit code, stdout,
/// stderr) triple yields exactly one verdict. Parse failures beat open goals
/// beat success; anything unrecognized is a tool failure with the raw output
/// attached.
inline Verdict classify_output(int exit_code, const std::string& out, const std::string& err,
                               const PatternTable& table = PatternTable::mock_grammar(),
                               long long wall_time_ms = 0) {
  const std::string combined = out + (err.empty() ? "" : "\n" + err);

  if (table.syntax) {
    std::smatch m;
    if (std::regex_search(combined, m, table.syntax->regex)) {
      int g = table.syntax->group("message");
      std::string message = trim(m[static_cast<std::size_t>(g)].str());
      if (message.empty()) message = trim(m[0].str());
      return Verdict::syntax_error(message, combined, wall_time_ms);
    }
  }
  if (table.semantic) {
    std::vector<std::string> labels;
    for (const auto& line : split_lines(combined).lines) {
      std::smatch m;
      if (std::regex_search(line, m, table.semantic->regex)) {
        int g = table.semantic->group("label");
        std::string label = trim(m[static_cast<std::size_t>(g)].str());
        if (!label.empty()) labels.push_back(label);
      }
    }
    if (!labels.empty()) return Verdict::semantic_error(labels, combined, wall_time_ms);
  }
  if (table.success) {
    for (const auto& line : split_lines(combined).lines)
      if (std::regex_search(line, table.success->regex))
        return Verdict::success(combined, wall_time_ms);
  }
  (void)exit_code;
  return Verdict::tool_failure(combined, wall_time_ms);
}

struct ProcessResult {
  int exit_code = -1;
  std::string out;
  std::string err;
  bool timed_out = false;
};

/// Runs a shell command with a timeout, capturing stdout and stderr. The
/// command is staged in a script file so no shell quoting is ever applied to
/// its content.
inline ProcessResult run_command(const std::string& command, int timeout_s,
                                 const std::filesystem::path& workdir = {}) {
  namespace fs = std::filesystem;
  static std::atomic<unsigned> counter{0};
  const fs::path base = fs::temp_directory_path() /
                        ("specloop-proc-" + std::to_string(::getpid()) + "-" +
                         std::to_string(counter++));
  const fs::path script = base.string() + ".sh";
  const fs::path out_file = base.string() + ".out";
  const fs::path err_file = base.string() + ".err";
  write_file(script, command + "\n");

  std::string invocation = "timeout " + std::to_string(timeout_s) + "s /bin/sh " +
                           script.string() + " > " + out_file.string() + " 2> " +
                           err_file.string();
  if (!workdir.empty()) invocation = "cd " + workdir.string() + " && " + invocation;

  int status = std::system(invocation.c_str());
  ProcessResult r;
  r.exit_code = (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  r.timed_out = r.exit_code == 124;
  if (fs::exists(out_file)) r.out = read_file(out_file);
  if (fs::exists(err_file)) r.err = read_file(err_file);
  std::error_code ec;
  fs::remove(script, ec);
  fs::remove(out_file, ec);
  fs::remove(err_file, ec);
  return r;
}

/// Adapter around an external prover invoked as a subprocess. The command
/// template gets `{file}` (and optionally `{method}`) substituted, the draft
/// is written to a temp file, and the captured output is classified through
/// the pattern table. Crashes and timeouts are tool failures, never
/// exceptions.
class SubprocessVerifier : public VerifierInterface {
 public:
  SubprocessVerifier(std::string command_template, PatternTable table, int timeout_s = 300)
      : command_template_(std::move(command_template)),
        table_(std::move(table)),
        timeout_s_(timeout_s) {
    if (command_template_.find("{file}") == std::string::npos)
      throw Error(ErrorCode::config, "verifier command template lacks {file} placeholder");
  }

  Verdict verify(const std::string& draft_source, const std::string& target_method) {
    namespace fs = std::filesystem;
    static std::atomic<unsigned> counter{0};
    const fs::path draft = fs::temp_directory_path() /
                           ("specloop-draft-" + std::to_string(::getpid()) + "-" +
                            std::to_string(counter++) + ".java");
    write_file(draft, draft_source);

    std::string command = command_template_;
    replace_all(command, "{file}", draft.string());
    replace_all(command, "{method}", target_method);

    const auto started = std::chrono::steady_clock::now();
    ProcessResult r = run_command(command, timeout_s_);
    const long long elapsed_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                     std::chrono::steady_clock::now() - started)
                                     .count();
    std::error_code ec;
    fs::remove(draft, ec);

    if (r.timed_out)
      return Verdict::tool_failure("verifier timed out after " + std::to_string(timeout_s_) +
                                       "s\n" + r.out + r.err,
                                   elapsed_ms);
    return classify_output(r.exit_code, r.out, r.err, table_, elapsed_ms);
  }

  Verdict check(const std::string& draft_source, const AnnotationCandidate&,
                const std::string& target_method) override {
    return verify(draft_source, target_method);
  }

 private:
  std::string command_template_;
  PatternTable table_;
  int timeout_s_;
};

/// One rule of the hermetic mock backend: match a candidate by exact JML
/// text, contained substring, or a named predicate, and return a canned
/// verdict. Rules are evaluated in declaration order; first match wins.
struct MockRule {
  enum class Match { exact, substring, predicate };

  Match match = Match::substring;
  std::string pattern;
  Verdict verdict;
};

namespace detail {

inline bool unbalanced_parens(const std::string& s) {
  int depth = 0;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (depth < 0) return true;
  }
  return depth != 0;
}

inline bool mock_predicate(const std::string& name, const std::string& jml) {
  if (name == "always") return true;
  if (name == "unbalanced_parens") return unbalanced_parens(jml);
  if (name == "missing_semicolon") return jml.find(';') == std::string::npos;
  throw Error(ErrorCode::config, "unknown mock predicate: " + name);
}

}  // namespace detail

/// Applies mock rules to a candidate. A candidate no rule matches is treated
/// as a plausible-but-wrong annotation: semantic error with one unmatched
/// postcondition branch.
inline Verdict mock_verify(const std::vector<MockRule>& rules, const std::string& draft_source,
                           const AnnotationCandidate& candidate) {
  if (rules.empty()) throw Error(ErrorCode::config, "mock verifier needs at least one rule");
  (void)draft_source;
  const std::string trimmed = trim(candidate.jml_text);
  for (const auto& rule : rules) {
    bool hit = false;
    switch (rule.match) {
      case MockRule::Match::exact: hit = trimmed == trim(rule.pattern); break;
      case MockRule::Match::substring:
        hit = candidate.jml_text.find(rule.pattern) != std::string::npos;
        break;
      case MockRule::Match::predicate:
        hit = detail::mock_predicate(rule.pattern, candidate.jml_text);
        break;
    }
    if (hit) return rule.verdict;
  }
  return Verdict::semantic_error({"Post (unmatched)"});
}

class MockVerifier : public VerifierInterface {
 public:
  explicit MockVerifier(std::vector<MockRule> rules) : rules_(std::move(rules)) {}

  static MockVerifier from_json(const nlohmann::json& j) {
    std::vector<MockRule> rules;
    for (const auto& rj : j) {
      MockRule rule;
      const std::string match = rj.at("match").get<std::string>();
      if (match == "exact")
        rule.match = MockRule::Match::exact;
      else if (match == "substring")
        rule.match = MockRule::Match::substring;
      else if (match == "predicate")
        rule.match = MockRule::Match::predicate;
      else
        throw Error(ErrorCode::config, "unknown mock rule match kind: " + match);
      rule.pattern = rj.at("pattern").get<std::string>();
      const auto& vj = rj.at("verdict");
      const std::string kind = vj.at("kind").get<std::string>();
      if (kind == "success")
        rule.verdict = Verdict::success();
      else if (kind == "syntax_error")
        rule.verdict = Verdict::syntax_error(vj.value("message", std::string("syntax error")));
      else if (kind == "semantic_error")
        rule.verdict =
            Verdict::semantic_error(vj.at("labels").get<std::vector<std::string>>());
      else if (kind == "tool_failure")
        rule.verdict = Verdict::tool_failure(vj.value("message", std::string()));
      else
        throw Error(ErrorCode::config, "unknown mock verdict kind: " + kind);
      rules.push_back(std::move(rule));
    }
    return MockVerifier(std::move(rules));
  }

  static MockVerifier load(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config, "bad mock rules " + path.string() + ": " + e.what());
    }
  }

  const std::vector<MockRule>& rules() const { return rules_; }

  Verdict check(const std::string& draft_source, const AnnotationCandidate& candidate,
                const std::string&) override {
    return mock_verify(rules_, draft_source, candidate);
  }

 private:
  std::vector<MockRule> rules_;
};

}  // namespace specloop
