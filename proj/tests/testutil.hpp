#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "specloop/oracle.hpp"
#include "specloop/prompting.hpp"
#include "specloop/source_model.hpp"
#include "specloop/task.hpp"
#include "specloop/verifier.hpp"

namespace testutil {

inline std::filesystem::path repo_dir() { return SPECLOOP_REPO_DIR; }
inline std::filesystem::path prompts_dir() { return repo_dir() / "prompts"; }

inline const specloop::PromptLibrary& prompts() {
  static specloop::PromptLibrary lib(prompts_dir());
  return lib;
}

/// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("specloop-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// The bundled callee-gap example: f's contract needs a contract for g.
inline std::string contract_source() {
  return "//@ ensures \\result == -2*x;\n"
         "int f(int x) { return g(-x); }\n"
         "int g(int x) { return x+x; }\n";
}

inline std::string invariant_source() {
  return "public class Sum {\n"
         "  /*@ normal_behavior\n"
         "    @ requires n >= 0;\n"
         "    @ ensures \\result == n * (n + 1) / 2;\n"
         "    @*/\n"
         "  public static int sum(int n) {\n"
         "    int total = 0;\n"
         "    //Add invariant here\n"
         "    for (int i = 0; i <= n; i++) {\n"
         "      total += i;\n"
         "    }\n"
         "    return total;\n"
         "  }\n"
         "}\n";
}

inline std::string correct_contract_jml() {
  return "/*@ normal_behavior ensures \\result == 2*x; assignable \\nothing; @*/";
}

inline std::string answer_with(const std::string& jml,
                               const std::string& reasoning = "Let me reason about this.") {
  return reasoning + "\n```\n" + jml + "\n```";
}

inline specloop::LoadedTask make_contract_task(const TempDir& dir,
                                               const std::string& id = "callee-double") {
  auto source = dir / (id + ".java");
  specloop::write_file(source, contract_source());
  specloop::SpecTask task;
  task.id = id;
  task.source_path = source;
  task.kind = specloop::GapKind::contract;
  task.gap_hint = "g";
  task.target_method = "f";
  return specloop::load_task(task);
}

inline specloop::LoadedTask make_invariant_task(const TempDir& dir,
                                                const std::string& id = "sum-loop") {
  auto source = dir / (id + ".java");
  specloop::write_file(source, invariant_source());
  specloop::SpecTask task;
  task.id = id;
  task.source_path = source;
  task.kind = specloop::GapKind::invariant;
  task.target_method = "sum";
  return specloop::load_task(task);
}

/// Oracle returning a fixed cycle of answers, independent of context.
class ScriptedOracle : public specloop::OracleInterface {
 public:
  explicit ScriptedOracle(std::vector<std::string> answers) : answers_(std::move(answers)) {}

  specloop::OracleReply complete(const specloop::Conversation& conv,
                                 const specloop::CallContext&) override {
    const std::string& answer = answers_[calls_++ % answers_.size()];
    return specloop::estimated_reply(conv, answer);
  }

  std::size_t calls() const { return calls_; }

 private:
  std::vector<std::string> answers_;
  std::size_t calls_ = 0;
};

/// Verifier returning a fixed cycle of verdicts.
class ScriptedVerifier : public specloop::VerifierInterface {
 public:
  explicit ScriptedVerifier(std::vector<specloop::Verdict> verdicts)
      : verdicts_(std::move(verdicts)) {}

  specloop::Verdict check(const std::string&, const specloop::AnnotationCandidate&,
                          const std::string&) override {
    return verdicts_[calls_++ % verdicts_.size()];
  }

  std::size_t calls() const { return calls_; }

 private:
  std::vector<specloop::Verdict> verdicts_;
  std::size_t calls_ = 0;
};

/// Mock verifier accepting exactly the canonical correct contract/invariant.
inline specloop::MockVerifier make_exact_mock(const std::string& accepted_jml) {
  std::vector<specloop::MockRule> rules;
  rules.push_back({specloop::MockRule::Match::exact, accepted_jml, specloop::Verdict::success()});
  return specloop::MockVerifier(std::move(rules));
}

}  // namespace testutil
