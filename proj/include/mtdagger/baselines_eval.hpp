#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mtdagger/dagger_engine.hpp"
#include "mtdagger/experiment_config.hpp"
#include "mtdagger/synth_suite.hpp"

namespace mtdagger {

struct CurvePoint {
  int round = 0;
  /// Expert-labelled episodes collected so far divided by N.
  double cumulative_demos_per_task = 0.0;
  long long cumulative_timesteps = 0;
  double mean_success = 0.0;
  std::vector<double> per_task_success;
  std::uint64_t seed = 0;
};

struct MethodRun {
  Method method = Method::kBC;
  std::uint64_t seed = 0;
  std::vector<CurvePoint> curve;
  /// One per curve point; BC records carry its uniform demo split.
  std::vector<RoundRecord> records;
  bool aborted = false;
  std::string error;
};

/// Extra hooks for callers that stream results (the harness writes per round).
struct RunHooks {
  std::function<void(const RoundRecord&, const CurvePoint&)> on_round;
};

/// One seed of one method. DAgger variants yield one point per round with
/// the policy trained on that round's dataset; BC yields one point per
/// budget level, each trained from scratch on pure expert data.
MethodRun run_method_seed(Method method, const SynthSuite& suite, const ExperimentConfig& config,
                          std::uint64_t seed, const RunHooks& hooks = {});

std::vector<MethodRun> run_method(Method method, const SynthSuite& suite,
                                  const ExperimentConfig& config,
                                  std::span<const std::uint64_t> seeds);

/// First crossing of `threshold` along one curve, linearly interpolated.
/// A point sitting exactly on the threshold counts as the crossing.
std::optional<double> first_crossing(std::span<const CurvePoint> curve, double threshold);

struct ThresholdResult {
  bool reached = false;
  /// Mean over seeds; meaningful only when every seed crossed.
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<std::optional<double>> per_seed;
};

ThresholdResult demos_to_threshold(std::span<const MethodRun> runs, double threshold);

struct HardestTaskReport {
  int task = 0;
  /// Final success of each task averaged over every run considered.
  std::vector<double> final_success;
  /// Per-method mean curve (x, success on `task`) across seeds.
  std::map<Method, std::vector<std::pair<double, double>>> curves;
  std::map<Method, double> final_task_success;
};

/// Hardest task = lowest final success pooled over all runs; ties go to the
/// lower index.
HardestTaskReport hardest_task_report(const std::map<Method, std::vector<MethodRun>>& runs);

/// Mean over rounds k >= 2 of the total-variation distance between the
/// softmax allocation probabilities of rounds k-1 and k.
double mean_allocation_churn(const MethodRun& run);

}  // namespace mtdagger
