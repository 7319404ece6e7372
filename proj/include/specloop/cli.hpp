#pragma once

#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "specloop/bench.hpp"
#include "specloop/errors.hpp"
#include "specloop/oracle.hpp"
#include "specloop/oracle_http.hpp"
#include "specloop/prompting.hpp"
#include "specloop/strategy.hpp"
#include "specloop/task.hpp"
#include "specloop/verifier.hpp"

namespace specloop {

/// Resolved application configuration. Precedence: CLI flags over config-file
/// values over defaults. The hash of the resolved config goes into the run
/// log header so replays can be tied to the exact setup that produced them.
struct AppConfig {
  std::string oracle = "stochastic";  // http | replay | stochastic
  std::string fixture_path;           // replay source / --record target
  bool record = false;
  std::string model = "gpt-4o";
  std::string api_base;
  std::string stochastic_path;  // JSON file with StochasticOracleConfig
  std::string verifier = "mock";  // mock | subprocess
  std::string mock_rules_path;
  std::string verifier_cmd;  // command template with {file}
  std::string pattern_table_path;
  std::string templates_dir = "prompts";
  int timeout_s = 300;
  int retries = 3;
  int parallelism = 1;
  std::uint64_t seed = 0;
  long long context_window = 128000;

  std::string hash() const {
    std::string canon;
    canon += "oracle=" + oracle + "\n";
    canon += "fixture_path=" + fixture_path + "\n";
    canon += "record=" + std::to_string(record) + "\n";
    canon += "model=" + model + "\n";
    canon += "api_base=" + api_base + "\n";
    canon += "stochastic_path=" + stochastic_path + "\n";
    canon += "verifier=" + verifier + "\n";
    canon += "mock_rules_path=" + mock_rules_path + "\n";
    canon += "verifier_cmd=" + verifier_cmd + "\n";
    canon += "pattern_table_path=" + pattern_table_path + "\n";
    canon += "templates_dir=" + templates_dir + "\n";
    canon += "timeout_s=" + std::to_string(timeout_s) + "\n";
    canon += "retries=" + std::to_string(retries) + "\n";
    canon += "parallelism=" + std::to_string(parallelism) + "\n";
    canon += "seed=" + std::to_string(seed) + "\n";
    canon += "context_window=" + std::to_string(context_window) + "\n";
    return to_hex(fnv1a64(canon));
  }
};

/// Owns the oracle/verifier implementations an invocation selected.
struct Backends {
  std::unique_ptr<OracleInterface> oracle_impl;
  std::unique_ptr<OracleInterface> recorder;  // wraps oracle_impl when recording
  std::unique_ptr<VerifierInterface> verifier;

  OracleInterface& oracle() { return recorder ? *recorder : *oracle_impl; }
};

inline Backends build_backends(const AppConfig& cfg) {
  if (cfg.parallelism < 1) throw Error(ErrorCode::config, "parallelism must be >= 1");
  Backends b;

  if (cfg.oracle == "replay") {
    if (cfg.fixture_path.empty())
      throw Error(ErrorCode::config, "replay oracle needs --fixture");
    if (!std::filesystem::exists(cfg.fixture_path))
      throw Error(ErrorCode::config, "fixture file does not exist: " + cfg.fixture_path);
    b.oracle_impl = std::make_unique<ReplayOracle>(cfg.fixture_path, cfg.context_window);
  } else if (cfg.oracle == "stochastic") {
    if (cfg.stochastic_path.empty())
      throw Error(ErrorCode::config, "stochastic oracle needs --stochastic <config.json>");
    if (!std::filesystem::exists(cfg.stochastic_path))
      throw Error(ErrorCode::config,
                  "stochastic config does not exist: " + cfg.stochastic_path);
    auto sc = load_stochastic_config(cfg.stochastic_path);
    sc.seed = cfg.seed;  // one run seed drives all randomness
    sc.context_window = cfg.context_window;
    b.oracle_impl = std::make_unique<StochasticOracle>(std::move(sc));
  } else if (cfg.oracle == "http") {
    HttpOracleConfig hc;
    hc.base_url = cfg.api_base;
    hc.model = cfg.model;
    hc.max_retries = cfg.retries;
    hc.context_window = cfg.context_window;
    b.oracle_impl = std::make_unique<HttpOracle>(std::move(hc));
  } else {
    throw Error(ErrorCode::config, "unknown oracle kind: " + cfg.oracle);
  }

  if (cfg.record) {
    if (cfg.fixture_path.empty())
      throw Error(ErrorCode::config, "--record needs --fixture <path>");
    if (cfg.oracle == "replay")
      throw Error(ErrorCode::config, "--record cannot wrap the replay oracle");
    b.recorder = std::make_unique<RecordingOracle>(*b.oracle_impl, cfg.fixture_path);
  }

  if (cfg.verifier == "mock") {
    if (cfg.mock_rules_path.empty())
      throw Error(ErrorCode::config, "mock verifier needs --mock-rules <rules.json>");
    if (!std::filesystem::exists(cfg.mock_rules_path))
      throw Error(ErrorCode::config, "mock rules do not exist: " + cfg.mock_rules_path);
    b.verifier = std::make_unique<MockVerifier>(MockVerifier::load(cfg.mock_rules_path));
  } else if (cfg.verifier == "subprocess") {
    if (cfg.verifier_cmd.empty())
      throw Error(ErrorCode::config, "subprocess verifier needs --verifier-cmd");
    PatternTable table = cfg.pattern_table_path.empty()
                             ? PatternTable::mock_grammar()
                             : PatternTable::load(cfg.pattern_table_path);
    b.verifier =
        std::make_unique<SubprocessVerifier>(cfg.verifier_cmd, std::move(table), cfg.timeout_s);
  } else {
    throw Error(ErrorCode::config, "unknown verifier kind: " + cfg.verifier);
  }
  return b;
}

inline PromptLibrary load_prompts(const AppConfig& cfg) {
  if (!std::filesystem::exists(cfg.templates_dir))
    throw Error(ErrorCode::config, "template directory does not exist: " + cfg.templates_dir);
  PromptLibrary prompts(cfg.templates_dir);
  for (const auto& name : prompts.drift())
    std::cerr << "specloop: warning: template " << name
              << " differs from the bundled version\n";
  return prompts;
}

inline SpecTask load_single_task(const std::filesystem::path& task_file) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(task_file));
  } catch (const std::exception& e) {
    throw Error(ErrorCode::manifest,
                "cannot parse task file " + task_file.string() + ": " + e.what());
  }
  if (j.is_array()) {
    if (j.empty()) throw Error(ErrorCode::manifest, "task file holds an empty array");
    j = j.front();
  }
  return task_from_json(j, task_file.parent_path());
}

inline std::filesystem::path annotated_output_path(const std::filesystem::path& source) {
  std::filesystem::path out = source;
  if (out.extension() == ".java") out.replace_extension();
  out += ".annotated.java";
  return out;
}

// Exit codes: 0 solved, 1 unsolved / no data, 2 configuration or IO problem.
inline int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::no_data:
    case ErrorCode::arm_missing: return 1;
    default: return 2;
  }
}

struct AnnotateArgs {
  std::filesystem::path task_file;
  std::string strategy = "feedback:10";
};

inline int cmd_annotate(const AppConfig& cfg, const AnnotateArgs& args) {
  try {
    const StrategyConfig strategy = StrategyConfig::parse(args.strategy);
    const SpecTask task = load_single_task(args.task_file);
    const LoadedTask loaded = load_task(task);
    const PromptLibrary prompts = load_prompts(cfg);
    Backends backends = build_backends(cfg);
    StrategyEnv env{&prompts, &backends.oracle(), backends.verifier.get()};

    Outcome outcome = run_strategy(loaded, strategy, env, RunContext{task.id, 1});

    if (outcome.solved) {
      const AttemptTrace& hit = outcome.traces.back();
      for (const auto& w : validate_shape(*hit.annotation))
        std::cerr << "specloop: shape warning: " << w << "\n";
      const std::filesystem::path out_path = annotated_output_path(task.source_path);
      write_file(out_path, splice(loaded.doc, *hit.annotation));
      std::cout << "solved '" << task.id << "' with candidate " << hit.candidate_index << " ("
                << outcome.total_tokens << " tokens, ratio " << outcome.token_ratio << ")\n"
                << hit.annotation->jml_text << "\n"
                << "wrote " << out_path.string() << "\n";
      return 0;
    }

    std::cout << "unsolved '" << task.id << "' after " << outcome.traces.size()
              << " candidates\n";
    for (const auto& t : outcome.traces)
      std::cout << "  candidate " << t.candidate_index << " (round " << t.round_index << "."
                << t.step_in_round << "): " << verdict_kind_name(t.verdict.kind) << "\n";
    if (!outcome.traces.empty()) {
      const Verdict& last = outcome.traces.back().verdict;
      std::cout << "final verdict: " << verdict_kind_name(last.kind) << "\n";
      for (const auto& label : last.branch_labels) std::cout << "  open: " << label << "\n";
      if (!last.parser_message.empty()) std::cout << "  parser: " << last.parser_message << "\n";
    }
    if (!outcome.failure_cause.empty())
      std::cout << "run aborted: " << outcome.failure_cause << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "specloop: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "specloop: " << e.what() << "\n";
    return 2;
  }
}

struct BenchRunArgs {
  std::filesystem::path manifest;
  std::vector<std::string> strategies;
  int runs = 1;
  std::filesystem::path out_log = "runs.jsonl";
  bool resume = false;
};

inline int cmd_bench_run(const AppConfig& cfg, const BenchRunArgs& args) {
  try {
    if (args.strategies.empty())
      throw Error(ErrorCode::config, "at least one --strategies entry is required");
    std::vector<StrategyConfig> strategies;
    for (const auto& spec : args.strategies) strategies.push_back(StrategyConfig::parse(spec));

    const std::vector<SpecTask> tasks = load_manifest(args.manifest);
    const PromptLibrary prompts = load_prompts(cfg);
    Backends backends = build_backends(cfg);
    StrategyEnv env{&prompts, &backends.oracle(), backends.verifier.get()};

    MatrixOptions options;
    options.runs = args.runs;
    options.seed = cfg.seed;
    options.parallelism = cfg.parallelism;
    options.resume = args.resume;
    options.log_path = args.out_log;
    options.config_hash = cfg.hash();
    options.template_hashes = prompts.template_hashes();
    options.progress = [](const RunRecord& r, std::size_t done, std::size_t total) {
      std::cout << "[" << done << "/" << total << "] " << r.task_id << " " << r.strategy
                << " run " << r.run_index << ": "
                << (r.outcome.solved ? "solved" : "unsolved") << " ("
                << r.outcome.traces.size() << " candidates)\n";
    };

    run_matrix(tasks, strategies, env, options);
    std::cout << "log written to " << args.out_log.string() << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "specloop: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "specloop: " << e.what() << "\n";
    return 2;
  }
}

struct BenchReportArgs {
  std::filesystem::path log;
  std::vector<std::string> curves;  // "steps" and/or "token-ratio"
  double max_ratio = 14.0;
  std::string table;  // "mixed" enables the summary table
  std::string sampling_arm = "sampling:50";
  std::string mixed_arm = "mixed:5x10";
  std::filesystem::path out_dir = ".";
};

inline int cmd_bench_report(const AppConfig& cfg, const BenchReportArgs& args) {
  (void)cfg;
  try {
    const LoadedLog log = load_log(args.log);
    if (log.records.empty()) throw Error(ErrorCode::no_data, "run log holds no records");

    std::set<std::string> strategies;
    std::set<GapKind> kinds;
    for (const auto& r : log.records) {
      strategies.insert(r.strategy);
      kinds.insert(r.task_kind);
    }

    std::filesystem::create_directories(args.out_dir);
    for (const auto& which : args.curves) {
      std::vector<CurveRow> rows;
      for (const auto& strategy : strategies) {
        for (GapKind kind : kinds) {
          bool any = false;
          for (const auto& r : log.records)
            if (r.strategy == strategy && r.task_kind == kind) { any = true; break; }
          if (!any) continue;
          CurveRow row;
          row.strategy = strategy;
          row.kind = kind;
          if (which == "steps") {
            row.curve = curve_success_vs_steps(log.records, strategy, kind,
                                               StrategyConfig::parse(strategy).candidate_budget());
          } else if (which == "token-ratio") {
            row.curve =
                curve_success_vs_token_ratio(log.records, strategy, kind, args.max_ratio);
          } else {
            throw Error(ErrorCode::config, "unknown curve kind: " + which);
          }
          rows.push_back(std::move(row));
        }
      }
      const std::filesystem::path out =
          args.out_dir / (which == "steps" ? "curve_steps.csv" : "curve_token_ratio.csv");
      write_file(out, curves_to_csv(rows));
      std::cout << "wrote " << out.string() << "\n";
    }

    if (args.table == "mixed") {
      const auto report =
          report_mixed_vs_sampling(log.records, args.sampling_arm, args.mixed_arm);
      const std::filesystem::path out = args.out_dir / "table_mixed.csv";
      write_file(out, summary_to_csv(report));
      std::cout << "wrote " << out.string() << "\n";
    } else if (!args.table.empty()) {
      throw Error(ErrorCode::config, "unknown table kind: " + args.table);
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "specloop: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "specloop: " << e.what() << "\n";
    return 2;
  }
}

inline int run_cli(int argc, char** argv) {
  CLI::App app{"specloop: reliable JML annotation synthesis with a verifier in the loop"};
  app.set_config("--config", "", "Configuration file (key=value lines)");

  AppConfig cfg;
  app.add_option("--oracle", cfg.oracle, "Oracle backend: http | replay | stochastic")
      ->capture_default_str();
  app.add_option("--fixture", cfg.fixture_path, "Replay fixture file (JSON Lines)");
  app.add_flag("--record", cfg.record, "Record completions into the fixture file");
  app.add_option("--model", cfg.model, "Model name for the http oracle")->capture_default_str();
  app.add_option("--api-base", cfg.api_base, "Chat-completion API base URL");
  app.add_option("--stochastic", cfg.stochastic_path, "Stochastic oracle config (JSON)");
  app.add_option("--verifier", cfg.verifier, "Verifier backend: mock | subprocess")
      ->capture_default_str();
  app.add_option("--mock-rules", cfg.mock_rules_path, "Mock verifier rules (JSON)");
  app.add_option("--verifier-cmd", cfg.verifier_cmd,
                 "Prover command template with a {file} placeholder");
  app.add_option("--pattern-table", cfg.pattern_table_path,
                 "Verdict classification patterns (INI)");
  app.add_option("--templates", cfg.templates_dir, "Prompt template directory")
      ->capture_default_str();
  app.add_option("--timeout", cfg.timeout_s, "Verifier timeout in seconds")
      ->capture_default_str();
  app.add_option("--retries", cfg.retries, "Oracle transport retries")->capture_default_str();
  app.add_option("--parallelism", cfg.parallelism, "Concurrent benchmark cells")
      ->capture_default_str();
  app.add_option("--seed", cfg.seed, "Run seed; determines all stochastic behavior")
      ->capture_default_str();
  app.add_option("--context-window", cfg.context_window,
                 "Token window before a conversation overflows")
      ->capture_default_str();

  AnnotateArgs annotate_args;
  auto* annotate = app.add_subcommand("annotate", "Fill the gap of a single task");
  annotate->add_option("task", annotate_args.task_file, "Task description (JSON)")->required();
  annotate->add_option("--strategy", annotate_args.strategy,
                       "feedback:K | sampling:N | mixed:SxF")
      ->capture_default_str();

  auto* bench = app.add_subcommand("bench", "Benchmark matrix commands");
  bench->require_subcommand(1);

  BenchRunArgs run_args;
  auto* bench_run = bench->add_subcommand("run", "Execute a strategy x run matrix");
  bench_run->add_option("manifest", run_args.manifest, "Task manifest (JSON array)")->required();
  bench_run->add_option("--strategies", run_args.strategies, "Comma-separated strategy specs")
      ->required()
      ->delimiter(',');
  bench_run->add_option("--runs", run_args.runs, "Runs per (task, strategy)")
      ->capture_default_str();
  bench_run->add_option("--out", run_args.out_log, "Run log path (JSON Lines)")
      ->capture_default_str();
  bench_run->add_flag("--resume", run_args.resume, "Skip cells already in the log");

  BenchReportArgs report_args;
  auto* bench_report = bench->add_subcommand("report", "Aggregate a run log into CSV reports");
  bench_report->add_option("log", report_args.log, "Run log to aggregate")->required();
  bench_report->add_option("--curve", report_args.curves, "Curve kind: steps | token-ratio")
      ->delimiter(',');
  bench_report->add_option("--max-ratio", report_args.max_ratio, "Token ratio axis limit")
      ->capture_default_str();
  bench_report->add_option("--table", report_args.table, "Summary table kind: mixed");
  bench_report->add_option("--sampling-arm", report_args.sampling_arm,
                           "Sampling arm for the summary table")
      ->capture_default_str();
  bench_report->add_option("--mixed-arm", report_args.mixed_arm,
                           "Mixed arm for the summary table")
      ->capture_default_str();
  bench_report->add_option("--out-dir", report_args.out_dir, "Report output directory")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*annotate) return cmd_annotate(cfg, annotate_args);
  if (*bench_run) return cmd_bench_run(cfg, run_args);
  if (*bench_report) return cmd_bench_report(cfg, report_args);
  std::cerr << app.help();
  return 2;
}

}  // namespace specloop
