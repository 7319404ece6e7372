#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "specloop/errors.hpp"
#include "specloop/oracle.hpp"
#include "specloop/prompting.hpp"
#include "specloop/source_model.hpp"
#include "specloop/task.hpp"
#include "specloop/verdict.hpp"
#include "specloop/verifier.hpp"

namespace specloop {

/// The error-recovery strategy for one run, normalized to rounds x steps:
/// feedback:K is one round of K steps, sampling:N is N rounds of one step,
/// mixed:SxF is S independent feedback rounds of F steps. The candidate
/// budget is rounds * steps_per_round.
struct StrategyConfig {
  enum class Kind { feedback, sampling, mixed };

  Kind kind = Kind::feedback;
  int rounds = 1;
  int steps_per_round = 1;

  int candidate_budget() const { return rounds * steps_per_round; }

  static StrategyConfig feedback(int max_steps) { return make(Kind::feedback, 1, max_steps); }
  static StrategyConfig sampling(int max_samples) { return make(Kind::sampling, max_samples, 1); }
  static StrategyConfig mixed(int rounds, int steps_per_round) {
    return make(Kind::mixed, rounds, steps_per_round);
  }

  /// Parses the spec-string grammar: `feedback:K` | `sampling:N` | `mixed:SxF`.
  static StrategyConfig parse(const std::string& spec) {
    auto colon = spec.find(':');
    if (colon == std::string::npos)
      throw Error(ErrorCode::config, "bad strategy spec '" + spec + "'");
    const std::string name = spec.substr(0, colon);
    const std::string args = spec.substr(colon + 1);
    try {
      if (name == "feedback") return feedback(std::stoi(args));
      if (name == "sampling") return sampling(std::stoi(args));
      if (name == "mixed") {
        auto x = args.find('x');
        if (x == std::string::npos) throw std::invalid_argument("expected SxF");
        return mixed(std::stoi(args.substr(0, x)), std::stoi(args.substr(x + 1)));
      }
    } catch (const std::invalid_argument&) {
      throw Error(ErrorCode::config, "bad strategy spec '" + spec + "'");
    } catch (const std::out_of_range&) {
      throw Error(ErrorCode::config, "bad strategy spec '" + spec + "'");
    }
    throw Error(ErrorCode::config, "unknown strategy '" + name + "'");
  }

  std::string to_string() const {
    switch (kind) {
      case Kind::feedback: return "feedback:" + std::to_string(steps_per_round);
      case Kind::sampling: return "sampling:" + std::to_string(rounds);
      case Kind::mixed:
        return "mixed:" + std::to_string(rounds) + "x" + std::to_string(steps_per_round);
    }
    return "?";
  }

 private:
  static StrategyConfig make(Kind kind, int rounds, int steps) {
    if (rounds < 1 || steps < 1)
      throw Error(ErrorCode::config, "strategy budget parameters must be >= 1");
    StrategyConfig c;
    c.kind = kind;
    c.rounds = rounds;
    c.steps_per_round = steps;
    return c;
  }
};

/// Token cost model of an iterative run with initial prompt `initial_tokens`,
/// a constant answer of `output_tokens_per_turn` and a constant feedback
/// message of `feedback_tokens_per_turn`.
struct TokenCostModel {
  long long initial_tokens = 0;
  long long output_tokens_per_turn = 0;
  long long feedback_tokens_per_turn = 0;
};

/// Total tokens of n feedback turns in one conversation. Turn i resends the
/// whole history, so turn i alone costs initial + (i-1)*(output+feedback) +
/// output, and the total is n*(initial+output) + n(n-1)/2*(output+feedback).
inline long long predicted_cost_feedback(const TokenCostModel& m, int n) {
  if (n < 1) throw Error(ErrorCode::config, "iteration count must be >= 1");
  const long long per_turn = m.initial_tokens + m.output_tokens_per_turn;
  const long long growth = m.output_tokens_per_turn + m.feedback_tokens_per_turn;
  return static_cast<long long>(n) * per_turn +
         (static_cast<long long>(n) * (n - 1) / 2) * growth;
}

/// Total tokens of n independent samples: n*(initial+output).
inline long long predicted_cost_sampling(const TokenCostModel& m, int n) {
  if (n < 1) throw Error(ErrorCode::config, "iteration count must be >= 1");
  return static_cast<long long>(n) * (m.initial_tokens + m.output_tokens_per_turn);
}

/// One candidate attempt: its position in the run, what was extracted (or why
/// extraction failed), the verdict, and the token meter after this attempt.
struct AttemptTrace {
  int candidate_index = 0;
  int round_index = 0;
  int step_in_round = 0;
  std::optional<AnnotationCandidate> annotation;
  std::string extraction_note;
  Verdict verdict;
  long long prompt_tokens = 0;
  long long completion_tokens = 0;
  long long cumulative_tokens = 0;
};

/// Result of one strategy run on one task.
struct Outcome {
  bool solved = false;
  std::optional<int> solving_candidate_index;
  std::vector<AttemptTrace> traces;
  long long initial_input_tokens = 0;
  long long total_tokens = 0;
  double token_ratio = 0.0;
  std::string failure_cause;
};

/// Tokens spent up to the solution (or up to budget exhaustion when unsolved)
/// divided by the tokens of the initial input query.
inline double measured_token_ratio(const Outcome& outcome) {
  if (outcome.initial_input_tokens <= 0)
    throw Error(ErrorCode::zero_initial_tokens, "outcome has no initial input tokens");
  return static_cast<double>(outcome.total_tokens) /
         static_cast<double>(outcome.initial_input_tokens);
}

struct StrategyEnv {
  const PromptLibrary* prompts = nullptr;
  OracleInterface* oracle = nullptr;
  VerifierInterface* verifier = nullptr;
};

struct RunContext {
  std::string task_id;
  std::uint32_t run_index = 1;
};

/// Optional capture of the full conversations a run produced, for tests and
/// the annotate command's transcript output.
struct RunDebug {
  std::vector<Conversation> conversations;
};

namespace detail {

inline void finalize(Outcome& outcome) {
  if (outcome.initial_input_tokens > 0)
    outcome.token_ratio = measured_token_ratio(outcome);
}

/// Shared engine for all three strategies: `rounds` independent
/// conversations, up to `steps` candidates each, stopping at the first
/// verified candidate. Candidates are numbered round-major, so the global
/// candidate order of mixed:SxF lists round 1 completely before round 2.
///
/// Per step: complete, extract, splice, verify. Extraction failures consume a
/// candidate and are answered with the syntactic feedback template; verifier
/// errors are answered with the rendered feedback; tool failures consume a
/// candidate and resend the previous user message verbatim (there is no
/// meaningful message to relay).
inline Outcome run_rounds(const LoadedTask& task, int rounds, int steps, StrategyEnv env,
                          RunContext ctx, RunDebug* debug) {
  if (!env.prompts || !env.oracle || !env.verifier)
    throw Error(ErrorCode::config, "strategy environment is incomplete");
  if (rounds < 1 || steps < 1)
    throw Error(ErrorCode::config, "strategy budget parameters must be >= 1");

  const GapKind kind = task.doc.gap.kind;
  const std::string target = task.verify_target();
  Outcome outcome;
  int candidate_index = 0;

  for (int round = 1; round <= rounds && !outcome.solved; ++round) {
    Conversation conv(kind);
    conv.add_system(env.prompts->render_system(kind));
    conv.add_user(env.prompts->render_initial(kind, task.doc));

    for (int step = 1; step <= steps; ++step) {
      ++candidate_index;
      OracleReply reply;
      try {
        reply = env.oracle->complete(
            conv, CallContext{ctx.task_id, ctx.run_index, static_cast<std::uint32_t>(round)});
      } catch (const Error& e) {
        if (e.code() == ErrorCode::transport || e.code() == ErrorCode::context_overflow ||
            e.code() == ErrorCode::fixture_miss) {
          outcome.failure_cause = e.what();
          if (debug) debug->conversations.push_back(conv);
          finalize(outcome);
          return outcome;
        }
        throw;
      }

      if (outcome.initial_input_tokens == 0) outcome.initial_input_tokens = reply.prompt_tokens;
      conv.add_assistant(reply.answer, reply.completion_tokens);

      AttemptTrace trace;
      trace.candidate_index = candidate_index;
      trace.round_index = round;
      trace.step_in_round = step;
      trace.prompt_tokens = reply.prompt_tokens;
      trace.completion_tokens = reply.completion_tokens;
      trace.cumulative_tokens =
          outcome.total_tokens + reply.prompt_tokens + reply.completion_tokens;
      outcome.total_tokens = trace.cumulative_tokens;

      std::optional<AnnotationCandidate> candidate;
      try {
        candidate = extract_annotation(reply.answer, kind);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::no_fenced_block && e.code() != ErrorCode::empty_block) throw;
        trace.extraction_note = "no JML block found";
        trace.verdict = Verdict::syntax_error("no JML block found");
      }

      if (candidate) {
        trace.annotation = candidate;
        const std::string draft = splice(task.doc, *candidate);
        trace.verdict = env.verifier->check(draft, *candidate, target);
      }

      outcome.traces.push_back(trace);

      if (trace.verdict.is_success()) {
        outcome.solved = true;
        outcome.solving_candidate_index = candidate_index;
        break;
      }

      if (step < steps) {
        if (trace.verdict.kind == Verdict::Kind::tool_failure) {
          conv.add_user(conv.last_user_content());
        } else {
          conv.add_user(
              env.prompts->render_feedback(kind, trace.verdict, task.doc.gap.calling_method));
        }
      }
    }

    if (debug) debug->conversations.push_back(conv);
  }

  finalize(outcome);
  return outcome;
}

}  // namespace detail

/// One conversation, up to `max_steps` candidates, appending verifier
/// feedback after every failure.
inline Outcome run_feedback(const LoadedTask& task, int max_steps, StrategyEnv env,
                            RunContext ctx = {}, RunDebug* debug = nullptr) {
  return detail::run_rounds(task, 1, max_steps, env, ctx, debug);
}

/// Up to `max_samples` independent three-message conversations, stopping at
/// the first verified candidate.
inline Outcome run_sampling(const LoadedTask& task, int max_samples, StrategyEnv env,
                            RunContext ctx = {}, RunDebug* debug = nullptr) {
  return detail::run_rounds(task, max_samples, 1, env, ctx, debug);
}

/// `rounds` independent feedback rounds of `steps_per_round` candidates each,
/// executed round-major.
inline Outcome run_mixed(const LoadedTask& task, int rounds, int steps_per_round,
                         StrategyEnv env, RunContext ctx = {}, RunDebug* debug = nullptr) {
  return detail::run_rounds(task, rounds, steps_per_round, env, ctx, debug);
}

inline Outcome run_strategy(const LoadedTask& task, const StrategyConfig& config,
                            StrategyEnv env, RunContext ctx = {}, RunDebug* debug = nullptr) {
  return detail::run_rounds(task, config.rounds, config.steps_per_round, env, ctx, debug);
}

}  // namespace specloop
