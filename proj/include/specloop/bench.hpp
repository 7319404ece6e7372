#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "specloop/errors.hpp"
#include "specloop/strategy.hpp"
#include "specloop/task.hpp"
#include "specloop/util.hpp"

namespace specloop {

/// One cell of the benchmark matrix: a strategy run on a task.
struct RunRecord {
  std::string task_id;
  GapKind task_kind = GapKind::invariant;
  std::string strategy;
  std::uint32_t run_index = 1;
  std::uint64_t seed = 0;
  Outcome outcome;
  long long started_at_ms = 0;
  long long finished_at_ms = 0;
};

// --- JSON (de)serialization for the run log ---------------------------------

inline nlohmann::json verdict_to_json(const Verdict& v) {
  nlohmann::json j = {{"kind", verdict_kind_name(v.kind)}};
  if (v.kind == Verdict::Kind::syntax_error) j["parser_message"] = v.parser_message;
  if (v.kind == Verdict::Kind::semantic_error) j["branch_labels"] = v.branch_labels;
  if (!v.raw_output.empty()) j["raw_output"] = v.raw_output;
  j["wall_time_ms"] = v.wall_time_ms;
  return j;
}

inline Verdict verdict_from_json(const nlohmann::json& j) {
  const auto kind = verdict_kind_from_string(j.at("kind").get<std::string>());
  const std::string raw = j.value("raw_output", std::string());
  const long long ms = j.value("wall_time_ms", 0LL);
  switch (kind) {
    case Verdict::Kind::success: return Verdict::success(raw, ms);
    case Verdict::Kind::syntax_error:
      return Verdict::syntax_error(j.value("parser_message", std::string()), raw, ms);
    case Verdict::Kind::semantic_error:
      return Verdict::semantic_error(j.at("branch_labels").get<std::vector<std::string>>(), raw,
                                     ms);
    case Verdict::Kind::tool_failure: return Verdict::tool_failure(raw, ms);
  }
  throw Error(ErrorCode::config, "unreachable verdict kind");
}

inline nlohmann::json trace_to_json(const AttemptTrace& t) {
  nlohmann::json j = {
      {"candidate_index", t.candidate_index},
      {"round_index", t.round_index},
      {"step_in_round", t.step_in_round},
      {"verdict", verdict_to_json(t.verdict)},
      {"prompt_tokens", t.prompt_tokens},
      {"completion_tokens", t.completion_tokens},
      {"cumulative_tokens", t.cumulative_tokens},
  };
  if (t.annotation)
    j["jml"] = t.annotation->jml_text;
  else
    j["extraction_note"] = t.extraction_note;
  return j;
}

inline AttemptTrace trace_from_json(const nlohmann::json& j, GapKind kind) {
  AttemptTrace t;
  t.candidate_index = j.at("candidate_index").get<int>();
  t.round_index = j.at("round_index").get<int>();
  t.step_in_round = j.at("step_in_round").get<int>();
  t.verdict = verdict_from_json(j.at("verdict"));
  t.prompt_tokens = j.at("prompt_tokens").get<long long>();
  t.completion_tokens = j.at("completion_tokens").get<long long>();
  t.cumulative_tokens = j.at("cumulative_tokens").get<long long>();
  if (j.contains("jml"))
    t.annotation = AnnotationCandidate(j.at("jml").get<std::string>(), kind);
  else
    t.extraction_note = j.value("extraction_note", std::string());
  return t;
}

inline nlohmann::json outcome_to_json(const Outcome& o) {
  nlohmann::json traces = nlohmann::json::array();
  for (const auto& t : o.traces) traces.push_back(trace_to_json(t));
  nlohmann::json j = {
      {"solved", o.solved},
      {"initial_input_tokens", o.initial_input_tokens},
      {"total_tokens", o.total_tokens},
      {"token_ratio", o.token_ratio},
      {"traces", std::move(traces)},
  };
  if (o.solving_candidate_index) j["solving_candidate_index"] = *o.solving_candidate_index;
  if (!o.failure_cause.empty()) j["failure_cause"] = o.failure_cause;
  return j;
}

inline Outcome outcome_from_json(const nlohmann::json& j, GapKind kind) {
  Outcome o;
  o.solved = j.at("solved").get<bool>();
  if (j.contains("solving_candidate_index"))
    o.solving_candidate_index = j.at("solving_candidate_index").get<int>();
  o.initial_input_tokens = j.at("initial_input_tokens").get<long long>();
  o.total_tokens = j.at("total_tokens").get<long long>();
  o.token_ratio = j.at("token_ratio").get<double>();
  o.failure_cause = j.value("failure_cause", std::string());
  for (const auto& tj : j.at("traces")) o.traces.push_back(trace_from_json(tj, kind));
  return o;
}

inline nlohmann::json record_to_json(const RunRecord& r) {
  return {
      {"task_id", r.task_id},
      {"task_kind", gap_kind_name(r.task_kind)},
      {"strategy", r.strategy},
      {"run_index", r.run_index},
      {"seed", r.seed},
      {"outcome", outcome_to_json(r.outcome)},
      {"started_at_ms", r.started_at_ms},
      {"finished_at_ms", r.finished_at_ms},
  };
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.task_id = j.at("task_id").get<std::string>();
  r.task_kind = gap_kind_from_string(j.at("task_kind").get<std::string>());
  r.strategy = j.at("strategy").get<std::string>();
  r.run_index = j.at("run_index").get<std::uint32_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.outcome = outcome_from_json(j.at("outcome"), r.task_kind);
  r.started_at_ms = j.value("started_at_ms", 0LL);
  r.finished_at_ms = j.value("finished_at_ms", 0LL);
  return r;
}

/// First line of a run log: provenance for replays.
struct LogHeader {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::map<std::string, std::string> template_hashes;
  long long created_at_ms = 0;
};

inline nlohmann::json header_to_json(const LogHeader& h) {
  return {
      {"type", "header"},
      {"seed", h.seed},
      {"config_hash", h.config_hash},
      {"template_hashes", h.template_hashes},
      {"created_at_ms", h.created_at_ms},
  };
}

struct LoadedLog {
  std::optional<LogHeader> header;
  std::vector<RunRecord> records;
};

inline LoadedLog load_log(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw Error(ErrorCode::io, "run log does not exist: " + path.string());
  LoadedLog log;
  std::ifstream in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::io,
                  "bad log line " + std::to_string(lineno) + " in " + path.string() + ": " +
                      e.what());
    }
    if (j.value("type", std::string()) == "header") {
      LogHeader h;
      h.seed = j.value("seed", 0ull);
      h.config_hash = j.value("config_hash", std::string());
      if (j.contains("template_hashes"))
        h.template_hashes = j.at("template_hashes").get<std::map<std::string, std::string>>();
      h.created_at_ms = j.value("created_at_ms", 0LL);
      log.header = std::move(h);
      continue;
    }
    log.records.push_back(record_from_json(j));
  }
  return log;
}

// --- Matrix execution --------------------------------------------------------

struct MatrixOptions {
  int runs = 1;
  std::uint64_t seed = 0;
  int parallelism = 1;
  bool resume = false;
  std::filesystem::path log_path;  // empty: keep records in memory only
  std::string config_hash;
  std::map<std::string, std::string> template_hashes;
  std::function<void(const RunRecord&, std::size_t done, std::size_t total)> progress;
};

namespace detail {

struct MatrixCell {
  std::size_t task_index = 0;
  std::size_t strategy_index = 0;
  std::uint32_t run_index = 1;
};

inline RunRecord execute_cell(const LoadedTask& task, const StrategyConfig& strategy,
                              std::uint32_t run_index, std::uint64_t master_seed,
                              StrategyEnv env) {
  RunRecord record;
  record.task_id = task.meta.id;
  record.task_kind = task.meta.kind;
  record.strategy = strategy.to_string();
  record.run_index = run_index;
  record.seed = substream_seed(master_seed, task.meta.id, run_index, 0);
  record.started_at_ms = now_ms();
  try {
    record.outcome =
        run_strategy(task, strategy, env, RunContext{task.meta.id, run_index});
  } catch (const std::exception& e) {
    // Cell-level failures never abort the matrix.
    record.outcome = Outcome{};
    record.outcome.failure_cause = e.what();
  }
  record.finished_at_ms = now_ms();
  return record;
}

}  // namespace detail

/// Executes every (task, strategy, run) cell. Records stream to the log file
/// in canonical cell order regardless of worker scheduling, so runs with the
/// same seed and deterministic backends produce identical logs (timestamps
/// aside). With `resume`, cells already present in the log are skipped and
/// their stored records returned in place.
inline std::vector<RunRecord> run_matrix(const std::vector<SpecTask>& tasks,
                                         const std::vector<StrategyConfig>& strategies,
                                         StrategyEnv env, const MatrixOptions& options) {
  if (options.runs < 1) throw Error(ErrorCode::config, "runs must be >= 1");
  if (options.parallelism < 1) throw Error(ErrorCode::config, "parallelism must be >= 1");

  // Resume bookkeeping: triples already in the log keep their stored record.
  std::map<std::tuple<std::string, std::string, std::uint32_t>, RunRecord> existing;
  bool log_exists = !options.log_path.empty() && std::filesystem::exists(options.log_path);
  if (options.resume && log_exists) {
    LoadedLog prior = load_log(options.log_path);
    if (prior.header && !options.config_hash.empty() &&
        prior.header->config_hash != options.config_hash)
      throw Error(ErrorCode::config, "resume refused: log was written with config hash " +
                                         prior.header->config_hash + ", current is " +
                                         options.config_hash);
    for (auto& r : prior.records)
      existing.emplace(std::make_tuple(r.task_id, r.strategy, r.run_index), std::move(r));
  }

  std::vector<LoadedTask> loaded;
  loaded.reserve(tasks.size());
  for (const auto& t : tasks) loaded.push_back(load_task(t));

  std::vector<detail::MatrixCell> cells;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti)
    for (std::size_t si = 0; si < strategies.size(); ++si)
      for (std::uint32_t run = 1; run <= static_cast<std::uint32_t>(options.runs); ++run)
        cells.push_back({ti, si, run});

  std::ofstream log_out;
  if (!options.log_path.empty()) {
    const bool fresh = !(options.resume && log_exists);
    log_out.open(options.log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log_out)
      throw Error(ErrorCode::io, "cannot open run log: " + options.log_path.string());
    if (fresh) {
      LogHeader header;
      header.seed = options.seed;
      header.config_hash = options.config_hash;
      header.template_hashes = options.template_hashes;
      header.created_at_ms = now_ms();
      log_out << header_to_json(header).dump() << "\n";
      log_out.flush();
    }
  }

  std::vector<std::optional<RunRecord>> slots(cells.size());
  std::vector<bool> from_log(cells.size(), false);
  std::mutex mutex;
  std::condition_variable filled;
  std::atomic<std::size_t> next_cell{0};

  auto worker = [&] {
    while (true) {
      const std::size_t i = next_cell.fetch_add(1);
      if (i >= cells.size()) return;
      const auto& cell = cells[i];
      const LoadedTask& task = loaded[cell.task_index];
      const StrategyConfig& strategy = strategies[cell.strategy_index];
      auto key = std::make_tuple(task.meta.id, strategy.to_string(), cell.run_index);
      RunRecord record;
      bool skipped = false;
      if (auto it = existing.find(key); it != existing.end()) {
        record = it->second;
        skipped = true;
      } else {
        record = detail::execute_cell(task, strategy, cell.run_index, options.seed, env);
      }
      {
        std::lock_guard lock(mutex);
        slots[i] = std::move(record);
        from_log[i] = skipped;
      }
      filled.notify_one();
    }
  };

  std::vector<std::thread> pool;
  const int threads = std::min<int>(options.parallelism, static_cast<int>(cells.size()));
  for (int t = 0; t < std::max(1, threads); ++t) pool.emplace_back(worker);

  // Flush completed cells in canonical order as they become available.
  std::vector<RunRecord> records;
  records.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::unique_lock lock(mutex);
    filled.wait(lock, [&] { return slots[i].has_value(); });
    RunRecord record = std::move(*slots[i]);
    bool skipped = from_log[i];
    lock.unlock();
    if (log_out.is_open() && !skipped) {
      log_out << record_to_json(record).dump() << "\n";
      log_out.flush();
    }
    if (options.progress) options.progress(record, i + 1, cells.size());
    records.push_back(std::move(record));
  }
  for (auto& t : pool) t.join();
  return records;
}

// --- Curve aggregation -------------------------------------------------------

struct CurvePoint {
  double x = 0.0;
  double min_rate = 0.0;
  double median_rate = 0.0;
  double max_rate = 0.0;
};

/// Success-rate series over a budget axis with pointwise min/median/max
/// across runs.
struct Curve {
  std::string x_axis;  // "candidate_steps" or "token_ratio"
  std::vector<CurvePoint> points;
};

namespace detail {

inline double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

// records of one (strategy, kind) arm, grouped by run index
inline std::map<std::uint32_t, std::vector<const RunRecord*>> group_arm(
    const std::vector<RunRecord>& records, const std::string& strategy, GapKind kind) {
  std::map<std::uint32_t, std::vector<const RunRecord*>> by_run;
  for (const auto& r : records)
    if (r.strategy == strategy && r.task_kind == kind) by_run[r.run_index].push_back(&r);
  return by_run;
}

template <typename SolvedAt>
inline Curve aggregate_curve(const std::map<std::uint32_t, std::vector<const RunRecord*>>& by_run,
                             const std::string& x_axis, const std::vector<double>& grid,
                             SolvedAt solved_at) {
  Curve curve;
  curve.x_axis = x_axis;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    std::vector<double> rates;
    for (const auto& [run, recs] : by_run) {
      std::set<std::string> tasks;
      std::size_t solved = 0;
      for (const RunRecord* r : recs) {
        tasks.insert(r->task_id);
        if (solved_at(*r, gi)) ++solved;
      }
      rates.push_back(tasks.empty() ? 0.0
                                    : static_cast<double>(solved) /
                                          static_cast<double>(tasks.size()));
    }
    CurvePoint p;
    p.x = grid[gi];
    p.min_rate = *std::min_element(rates.begin(), rates.end());
    p.max_rate = *std::max_element(rates.begin(), rates.end());
    p.median_rate = median_of(rates);
    curve.points.push_back(p);
  }
  return curve;
}

}  // namespace detail

/// Success rate as a function of allowed candidate steps: at step k, a task
/// counts as solved if its solving candidate index is <= k. Unsolved runs
/// count at no step.
inline Curve curve_success_vs_steps(const std::vector<RunRecord>& records,
                                    const std::string& strategy, GapKind kind, int max_steps) {
  auto by_run = detail::group_arm(records, strategy, kind);
  if (by_run.empty())
    throw Error(ErrorCode::no_data, "no records for " + strategy + "/" + gap_kind_name(kind));
  std::vector<double> grid;
  for (int k = 1; k <= max_steps; ++k) grid.push_back(static_cast<double>(k));
  return detail::aggregate_curve(by_run, "candidate_steps", grid, [](const RunRecord& r,
                                                                     std::size_t gi) {
    return r.outcome.solved && r.outcome.solving_candidate_index &&
           *r.outcome.solving_candidate_index <= static_cast<int>(gi) + 1;
  });
}

/// Success rate as a function of allowed token ratio, on a 0.1-step grid up
/// to `max_ratio`. A solved task enters the curve at the first grid point at
/// or above its token ratio; the comparison is exact integer arithmetic
/// (total*10 <= tenths*initial), so grid boundaries are not subject to
/// floating-point drift.
inline Curve curve_success_vs_token_ratio(const std::vector<RunRecord>& records,
                                          const std::string& strategy, GapKind kind,
                                          double max_ratio = 14.0) {
  auto by_run = detail::group_arm(records, strategy, kind);
  if (by_run.empty())
    throw Error(ErrorCode::no_data, "no records for " + strategy + "/" + gap_kind_name(kind));
  const int max_tenths = static_cast<int>(max_ratio * 10.0 + 0.5);
  std::vector<double> grid;
  for (int i = 1; i <= max_tenths; ++i) grid.push_back(static_cast<double>(i) / 10.0);
  return detail::aggregate_curve(
      by_run, "token_ratio", grid, [](const RunRecord& r, std::size_t gi) {
        const long long tenths = static_cast<long long>(gi) + 1;
        return r.outcome.solved && r.outcome.initial_input_tokens > 0 &&
               r.outcome.total_tokens * 10 <= tenths * r.outcome.initial_input_tokens;
      });
}

// --- Mixed vs. sampling summary ----------------------------------------------

struct ArmCategorySummary {
  std::string category;  // gap kind name
  std::string arm;       // strategy spec string
  int solved = 0;
  int total = 0;
  std::vector<std::string> exclusive_ids;  // solved only by this arm
};

struct MixedVsSamplingReport {
  std::vector<ArmCategorySummary> rows;
};

/// Per category: how many tasks each arm solved (in any run) and which tasks
/// each arm solved exclusively.
inline MixedVsSamplingReport report_mixed_vs_sampling(
    const std::vector<RunRecord>& records, const std::string& sampling_arm = "sampling:50",
    const std::string& mixed_arm = "mixed:5x10") {
  bool saw_sampling = false, saw_mixed = false;
  for (const auto& r : records) {
    saw_sampling |= r.strategy == sampling_arm;
    saw_mixed |= r.strategy == mixed_arm;
  }
  if (!saw_sampling)
    throw Error(ErrorCode::arm_missing, "no records for arm " + sampling_arm);
  if (!saw_mixed) throw Error(ErrorCode::arm_missing, "no records for arm " + mixed_arm);

  MixedVsSamplingReport report;
  for (GapKind kind : {GapKind::invariant, GapKind::contract}) {
    std::map<std::string, std::pair<std::set<std::string>, std::set<std::string>>> arm_sets;
    // first: all task ids seen, second: task ids solved in any run
    for (const auto& r : records) {
      if (r.task_kind != kind) continue;
      if (r.strategy != sampling_arm && r.strategy != mixed_arm) continue;
      auto& [seen, solved] = arm_sets[r.strategy];
      seen.insert(r.task_id);
      if (r.outcome.solved) solved.insert(r.task_id);
    }
    if (arm_sets.empty()) continue;

    const auto& sampling = arm_sets[sampling_arm];
    const auto& mixed = arm_sets[mixed_arm];
    auto exclusive = [](const std::set<std::string>& a, const std::set<std::string>& b) {
      std::vector<std::string> out;
      std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
      return out;
    };
    report.rows.push_back({gap_kind_name(kind), sampling_arm,
                           static_cast<int>(sampling.second.size()),
                           static_cast<int>(sampling.first.size()),
                           exclusive(sampling.second, mixed.second)});
    report.rows.push_back({gap_kind_name(kind), mixed_arm,
                           static_cast<int>(mixed.second.size()),
                           static_cast<int>(mixed.first.size()),
                           exclusive(mixed.second, sampling.second)});
  }
  return report;
}

// --- CSV output ----------------------------------------------------------------

struct CurveRow {
  std::string strategy;
  GapKind kind = GapKind::invariant;
  Curve curve;
};

namespace detail {

inline std::string format_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string format_x(const std::string& x_axis, double x) {
  char buf[32];
  if (x_axis == "candidate_steps")
    std::snprintf(buf, sizeof(buf), "%d", static_cast<int>(x + 0.5));
  else
    std::snprintf(buf, sizeof(buf), "%.1f", x);
  return buf;
}

}  // namespace detail

inline std::string curves_to_csv(const std::vector<CurveRow>& rows) {
  std::string out = "strategy,kind,x_axis,x,min,median,max\n";
  for (const auto& row : rows) {
    for (const auto& p : row.curve.points) {
      out += row.strategy;
      out += ',';
      out += gap_kind_name(row.kind);
      out += ',';
      out += row.curve.x_axis;
      out += ',';
      out += detail::format_x(row.curve.x_axis, p.x);
      out += ',';
      out += detail::format_rate(p.min_rate);
      out += ',';
      out += detail::format_rate(p.median_rate);
      out += ',';
      out += detail::format_rate(p.max_rate);
      out += '\n';
    }
  }
  return out;
}

inline std::string summary_to_csv(const MixedVsSamplingReport& report) {
  std::string out = "category,arm,solved,total,exclusive_ids\n";
  for (const auto& row : report.rows) {
    std::string ids;
    for (std::size_t i = 0; i < row.exclusive_ids.size(); ++i) {
      ids += row.exclusive_ids[i];
      if (i + 1 < row.exclusive_ids.size()) ids += ';';
    }
    out += row.category + "," + row.arm + "," + std::to_string(row.solved) + "," +
           std::to_string(row.total) + "," + ids + "\n";
  }
  return out;
}

}  // namespace specloop
