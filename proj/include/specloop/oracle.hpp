#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "specloop/errors.hpp"
#include "specloop/prompting.hpp"
#include "specloop/util.hpp"

namespace specloop {

struct OracleReply {
  enum class Source { provider_usage, estimated };

  std::string answer;
  long long prompt_tokens = 0;
  long long completion_tokens = 0;
  Source source = Source::estimated;
};

/// Identifies the cell a completion belongs to. Stochastic oracles derive an
/// independent random substream per (task, run, round), so concurrent cells
/// produce the same answers as sequential execution.
struct CallContext {
  std::string task_id;
  std::uint32_t run_index = 1;
  std::uint32_t round_index = 1;
};

class OracleInterface {
 public:
  virtual ~OracleInterface() = default;

  /// Produces one assistant answer for a conversation ending in a user
  /// message. The caller appends the answer to the conversation.
  virtual OracleReply complete(const Conversation& conv, const CallContext& ctx) = 0;

 protected:
  void require_sendable(const Conversation& conv, long long context_window) const {
    if (!conv.awaiting_answer())
      throw std::logic_error("conversation must end with a user message");
    if (context_window > 0 && conv.prompt_token_sum() > context_window)
      throw Error(ErrorCode::context_overflow,
                  "conversation of " + std::to_string(conv.prompt_token_sum()) +
                      " tokens exceeds window of " + std::to_string(context_window));
  }
};

inline OracleReply estimated_reply(const Conversation& conv, std::string answer) {
  OracleReply r;
  r.prompt_tokens = conv.prompt_token_sum();
  r.completion_tokens = count_tokens(answer);
  r.answer = std::move(answer);
  r.source = OracleReply::Source::estimated;
  return r;
}

/// One recorded completion: the full message list it answered plus the reply.
struct FixtureEntry {
  std::string conversation_hash;
  std::vector<Message> messages;
  OracleReply reply;
};

/// JSON Lines store of recorded completions, keyed by conversation content
/// hash. Re-recording a hash overwrites the previous entry (the file is
/// append-only; the last record for a hash wins on load).
class FixtureStore {
 public:
  FixtureStore() = default;

  explicit FixtureStore(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) load();
  }

  const std::filesystem::path& path() const { return path_; }
  std::size_t size() const { return entries_.size(); }

  std::optional<OracleReply> lookup(const std::string& hash) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(hash);
    if (it == entries_.end()) return std::nullopt;
    return it->second.reply;
  }

  void record(const Conversation& conv, const OracleReply& reply) {
    std::lock_guard lock(mutex_);
    FixtureEntry entry;
    entry.conversation_hash = conv.content_hash();
    entry.messages = conv.messages();
    entry.reply = reply;
    if (entries_.count(entry.conversation_hash))
      std::cerr << "specloop: overwriting fixture entry " << entry.conversation_hash << "\n";
    append_to_file(entry);
    entries_[entry.conversation_hash] = std::move(entry);
  }

 private:
  void load() {
    std::ifstream in(path_);
    if (!in) throw Error(ErrorCode::storage, "cannot open fixture file: " + path_.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::storage, "bad fixture line " + std::to_string(lineno) + ": " +
                                            e.what());
      }
      FixtureEntry entry;
      entry.conversation_hash = j.at("hash").get<std::string>();
      for (const auto& m : j.at("messages"))
        entry.messages.emplace_back(role_from_string(m.at("role").get<std::string>()),
                                    m.at("content").get<std::string>());
      entry.reply.answer = j.at("answer").get<std::string>();
      entry.reply.prompt_tokens = j.value("prompt_tokens", 0LL);
      entry.reply.completion_tokens = j.value("completion_tokens", 0LL);
      entry.reply.source = j.value("source", std::string("estimated")) == "provider_usage"
                               ? OracleReply::Source::provider_usage
                               : OracleReply::Source::estimated;
      entries_[entry.conversation_hash] = std::move(entry);
    }
  }

  void append_to_file(const FixtureEntry& entry) {
    if (path_.empty()) return;
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : entry.messages)
      msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    nlohmann::json j = {
        {"hash", entry.conversation_hash},
        {"messages", std::move(msgs)},
        {"answer", entry.reply.answer},
        {"prompt_tokens", entry.reply.prompt_tokens},
        {"completion_tokens", entry.reply.completion_tokens},
        {"source",
         entry.reply.source == OracleReply::Source::provider_usage ? "provider_usage"
                                                                   : "estimated"},
    };
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error(ErrorCode::storage, "cannot append to fixture file: " + path_.string());
    out << j.dump() << "\n";
  }

  std::filesystem::path path_;
  std::map<std::string, FixtureEntry> entries_;
  mutable std::mutex mutex_;
};

/// Deterministic oracle that answers from a fixture file. A conversation
/// without a recorded answer is a hard miss naming the offending hash, so
/// any prompt change invalidates replays loudly.
class ReplayOracle : public OracleInterface {
 public:
  explicit ReplayOracle(const std::filesystem::path& fixture_path, long long context_window = 0)
      : store_(fixture_path), context_window_(context_window) {}

  OracleReply complete(const Conversation& conv, const CallContext&) override {
    require_sendable(conv, context_window_);
    const std::string hash = conv.content_hash();
    auto reply = store_.lookup(hash);
    if (!reply)
      throw Error(ErrorCode::fixture_miss,
                  "no fixture entry for conversation " + hash + " in " + store_.path().string());
    return *reply;
  }

 private:
  FixtureStore store_;
  long long context_window_;
};

/// Pass-through wrapper that records every completion of an inner oracle so
/// future runs can replay without network access.
class RecordingOracle : public OracleInterface {
 public:
  RecordingOracle(OracleInterface& inner, const std::filesystem::path& fixture_path)
      : inner_(inner), store_(fixture_path) {}

  OracleReply complete(const Conversation& conv, const CallContext& ctx) override {
    OracleReply reply = inner_.complete(conv, ctx);
    store_.record(conv, reply);
    return reply;
  }

  FixtureStore& store() { return store_; }

 private:
  OracleInterface& inner_;
  FixtureStore store_;
};

/// Configuration for the seeded simulation oracle.
///
/// A fresh conversation succeeds with probability p (per task, overridable);
/// on a feedback turn the oracle gets stuck with probability `stuck_bias`,
/// answering a marginal edit of its previous wrong answer instead of drawing
/// fresh.
struct StochasticOracleConfig {
  double success_probability = 0.5;
  std::string correct_answer;
  std::vector<std::string> wrong_answer_pool;
  double stuck_bias = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, double> per_task_success;
  long long context_window = 0;

  void validate() const {
    if (success_probability < 0.0 || success_probability > 1.0)
      throw Error(ErrorCode::config, "success_probability out of [0,1]");
    if (stuck_bias < 0.0 || stuck_bias > 1.0)
      throw Error(ErrorCode::config, "stuck_bias out of [0,1]");
    if (correct_answer.empty())
      throw Error(ErrorCode::config, "stochastic oracle needs a correct answer");
    if (wrong_answer_pool.empty())
      throw Error(ErrorCode::config, "stochastic oracle needs a non-empty wrong answer pool");
    for (const auto& [id, p] : per_task_success)
      if (p < 0.0 || p > 1.0)
        throw Error(ErrorCode::config, "per-task success probability out of [0,1]: " + id);
  }
};

/// Simulates an unreliable oracle for strategy experiments. Stateless between
/// calls: every answer is a pure function of (seed, task, run, round, turn),
/// so replays and parallel runs agree bit for bit.
class StochasticOracle : public OracleInterface {
 public:
  explicit StochasticOracle(StochasticOracleConfig config) : config_(std::move(config)) {
    config_.validate();
  }

  const StochasticOracleConfig& config() const { return config_; }

  OracleReply complete(const Conversation& conv, const CallContext& ctx) override {
    require_sendable(conv, config_.context_window);
    const std::uint64_t stream =
        substream_seed(config_.seed, ctx.task_id, ctx.run_index, ctx.round_index);
    const std::size_t turn = conv.assistant_turns();
    std::mt19937_64 rng(splitmix64(stream ^ (0x51ed2705u + turn)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::string answer;
    if (turn > 0 && unit(rng) < config_.stuck_bias) {
      answer = marginal_edit(conv.last_assistant_content());
    } else if (unit(rng) < task_success_probability(ctx.task_id)) {
      answer = config_.correct_answer;
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, config_.wrong_answer_pool.size() - 1);
      answer = config_.wrong_answer_pool[pick(rng)];
    }
    return estimated_reply(conv, std::move(answer));
  }

  double task_success_probability(const std::string& task_id) const {
    auto it = config_.per_task_success.find(task_id);
    return it != config_.per_task_success.end() ? it->second : config_.success_probability;
  }

  /// The "stuck" transformation: the previous answer with one inert line
  /// added inside its final fenced block (or appended, if there is none).
  static std::string marginal_edit(const std::string& answer) {
    auto lines = split_lines(answer);
    for (std::size_t i = lines.lines.size(); i-- > 0;) {
      std::string_view l = lines.lines[i];
      std::size_t ws = l.find_first_not_of(" \t");
      if (ws != std::string_view::npos && l.substr(ws).rfind("```", 0) == 0) {
        lines.lines.insert(lines.lines.begin() + static_cast<std::ptrdiff_t>(i),
                           "  // minor revision");
        return join_lines(lines.lines, lines.trailing_newline);
      }
    }
    return answer + "\n// minor revision";
  }

 private:
  StochasticOracleConfig config_;
};

inline StochasticOracleConfig stochastic_config_from_json(const nlohmann::json& j) {
  StochasticOracleConfig cfg;
  cfg.success_probability = j.value("success_probability", cfg.success_probability);
  cfg.correct_answer = j.value("correct_answer", cfg.correct_answer);
  if (j.contains("wrong_answer_pool"))
    cfg.wrong_answer_pool = j.at("wrong_answer_pool").get<std::vector<std::string>>();
  cfg.stuck_bias = j.value("stuck_bias", cfg.stuck_bias);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("per_task_success"))
    cfg.per_task_success = j.at("per_task_success").get<std::map<std::string, double>>();
  return cfg;
}

inline StochasticOracleConfig load_stochastic_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw Error(ErrorCode::config, "bad stochastic config " + path.string() + ": " + e.what());
  }
  return stochastic_config_from_json(j);
}

}  // namespace specloop
