#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtdagger/baselines_eval.hpp"
#include "mtdagger/experiment_config.hpp"
#include "mtdagger/synth_suite.hpp"

namespace mtdagger {

inline constexpr std::string_view kLibraryVersion = "1.0.0";
/// Bumped whenever a CSV column or summary field changes meaning.
inline constexpr int kOutputSchemaVersion = 1;

/// $MTDAGGER_OUTPUT_ROOT when set and non-empty, otherwise ./runs.
std::filesystem::path default_output_root();

/// Directory name used when the caller does not pick one.
std::string default_run_name(const ExperimentConfig& config);

std::string rounds_csv_header(int num_tasks);
std::string rounds_csv_row(const RoundRecord& record, const CurvePoint& point);
std::string task_rounds_csv_header();
/// One line per task, each ending in '\n'.
std::string task_rounds_csv_rows(const RoundRecord& record, const CurvePoint& point);

struct ExperimentOutput {
  std::filesystem::path directory;
  std::map<Method, std::vector<MethodRun>> runs;
};

/// Runs config.method on every seed. Layout:
///   dir/config.yaml
///   dir/summary.json
///   dir/seed_<s>/rounds.csv, task_rounds.csv, runlog.jsonl
/// Per-seed files are appended and flushed as each round completes.
/// Re-running with the same config rewrites identical bytes.
ExperimentOutput run_experiment(const ExperimentConfig& config, const std::filesystem::path& dir);

/// Every method in `methods` on every seed, one subdirectory per method
/// with the run_experiment layout below it, and one summary.json on top.
ExperimentOutput run_comparison(const ExperimentConfig& config, std::span<const Method> methods,
                                const std::filesystem::path& dir);

/// Summary document: per method demos-to-threshold, final success and
/// allocation churn; the hardest task across all methods.
std::string summary_json(const ExperimentConfig& config,
                         const std::map<Method, std::vector<MethodRun>>& runs);

/// Fixed-width comparison table for terminals.
std::string summary_table(const ExperimentConfig& config,
                          const std::map<Method, std::vector<MethodRun>>& runs);

/// Task table: id, tier, noise, open-loop gain, closed-loop spectral radius,
/// validated expert success.
std::string describe_suite(const SynthSuite& suite);

struct ReplayReport {
  bool identical = false;
  int rounds_logged = 0;
  int rounds_replayed = 0;
  /// The log ends before its final line (interrupted run); only the logged
  /// prefix is compared.
  bool partial = false;
  /// Empty when identical.
  std::string first_difference;
};

/// Re-executes the run recorded in a runlog.jsonl and compares every logged round.
ReplayReport replay_runlog(const std::filesystem::path& runlog);

}  // namespace mtdagger
