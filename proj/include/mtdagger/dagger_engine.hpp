#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtdagger/dataset.hpp"
#include "mtdagger/interfaces.hpp"
#include "mtdagger/scheduler.hpp"
#include "mtdagger/success_tracker.hpp"

namespace mtdagger {

/// Probability of executing the expert's action, decayed once per round so
/// control shifts to the learner.
struct MixingSchedule {
  double epsilon = 0.5;
  double decay = 0.5;
  double floor = 0.0;

  /// max(epsilon - decay, floor)
  MixingSchedule decayed() const;
  void validate() const;
};

struct DaggerConfig {
  SchedulerMode mode = SchedulerMode::kTaskNeed;
  /// false feeds the last raw success rate straight into the need metric.
  bool use_kalman_filter = true;
  int rounds = 10;
  int initial_demos_per_task = 3;
  SchedulerParams scheduler;
  MixingSchedule mixing;
  FilterParams filter;
  KalmanState prior;
  TrainingParams training;
  std::uint64_t master_seed = 0;

  /// Throws ValidationError naming the violated invariant.
  void validate(int num_tasks) const;
};

/// Non-owning view of one task's environment and expert.
struct TaskBinding {
  TaskEnvironment* env = nullptr;
  const Expert* expert = nullptr;
};

struct CollectionResult {
  std::vector<LabeledSample> samples;
  SuccessMeasurement measurement;
  int successes = 0;
  int timesteps = 0;
};

/// Runs `episodes` episodes on one task. At every timestep the expert's
/// action is executed with probability `epsilon` and the learner's otherwise;
/// the stored label is always the expert's. `learner` may be null only when
/// epsilon == 1.
CollectionResult collect_task_data(int task_id, const Learner* learner, const Expert& expert,
                                   TaskEnvironment& env, int episodes, double epsilon, Rng& rng);

/// Behaviour cloning on the initial demonstrations. Throws EmptyTaskData if
/// any task has no samples.
LossEndpoints train_initial(Learner& learner, const AggregatedDataset& dataset,
                            const TrainingParams& params, Rng& rng);

struct TaskRoundMetrics {
  /// Success over this round's collection episodes (expert-only in round 0).
  SuccessMeasurement raw_success;
  int successes = 0;
  int timesteps = 0;
  /// Filter state available when this round was scheduled.
  KalmanState kalman;
  /// Success estimate the need metric used (kalman or last raw rate).
  double need_input = 0.5;
  /// Gain the performance-gain metric used.
  double gain_input = 0.0;
  /// Training on the dataset after this round's aggregation.
  double loss_start = 0.0;
  double loss_end = 0.0;
  double gain = 0.0;
};

struct RoundRecord {
  int round_index = 0;
  AllocationPlan allocation;
  std::vector<TaskRoundMetrics> per_task;
  double epsilon_used = 0.0;
  std::size_t dataset_size = 0;
  int dataset_episodes = 0;
  /// Round whose collection measurements fed the scheduler, -1 for none.
  int measurement_source_round = -1;
  /// Round whose training gains fed the scheduler, -1 for none.
  int gain_source_round = -1;
  /// True when the plan came from the round-1 bootstrap rather than the metric.
  bool bootstrap_uniform = false;
};

struct DaggerResult {
  std::vector<RoundRecord> records;
  AggregatedDataset dataset;
  bool aborted = false;
  std::string error;
};

/// Invoked after each round's training with the freshly trained learner.
using RoundObserver = std::function<void(const RoundRecord&, const Learner&)>;

/// Round 0 collects `initial_demos_per_task` expert episodes per task and
/// trains the initial policy. Each round k = 1..K then:
///   1. folds round k-1's collection measurements into the filters,
///   2. schedules the budget from need (1 - p_hat) or gain,
///   3. collects with the expert mixed in at probability epsilon_{k-1},
///   4. aggregates, trains on the grown dataset and decays epsilon.
/// The training that closes round k is what opens round k+1, so gains
/// recorded in round k drive round k+1's scheduling. A failure inside a task
/// environment stops the run and returns the records completed so far.
DaggerResult run_dagger(const DaggerConfig& config, std::span<const TaskBinding> tasks,
                        Learner& learner, const RoundObserver& observer = {});

}  // namespace mtdagger
