#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtdagger/success_tracker.hpp"

namespace mtdagger {

enum class SchedulerMode {
  kTaskNeed,         // rank 1 - p_hat
  kPerformanceGain,  // rank max(0, L_start - L_end)
  kUniform,          // equal split, metrics ignored
};

std::string_view to_string(SchedulerMode mode);
SchedulerMode scheduler_mode_from_string(std::string_view name);

/// Integer demonstration counts for one round plus the signals behind them.
struct AllocationPlan {
  std::vector<int> counts;
  int budget = 0;
  int min_per_task = 0;
  /// Softmax mass per task (1/N each for uniform plans).
  std::vector<double> probabilities;
  /// The metric that was ranked (need or gain); empty for uniform plans.
  std::vector<double> raw_metrics;
  std::vector<double> normalized_scores;

  int total() const;
};

struct SchedulerParams {
  double temperature = 0.5;
  int budget = 108;
  int min_per_task = 1;
};

double compute_need(double estimate);
double compute_gain(double loss_start, double loss_end);

/// (rank - 1) / (N - 1) with rank 1 for the smallest value, 0 for N = 1.
/// Equal values are ranked by ascending index.
std::vector<double> rank_normalize(std::span<const double> metrics);

/// exp(s_i / T) / sum_j exp(s_j / T), evaluated left to right in index order.
std::vector<double> softmax(std::span<const double> scores, double temperature);

/// Largest-remainder integerization of max(min_per_task, ideal_i).
/// Shortfall goes one unit at a time to the largest fractional parts;
/// overflow is removed one unit at a time from tasks above the floor,
/// smallest fractional parts first. Ties go to the lower index.
std::vector<int> apportion(std::span<const double> ideal, int budget, int min_per_task);

/// Temperature softmax over the scores followed by apportion(). Throws
/// InfeasibleBudget when N * min_per_task > budget.
AllocationPlan softmax_allocate(std::span<const double> scores, double temperature, int budget,
                                int min_per_task);

AllocationPlan uniform_allocate(int num_tasks, int budget, int min_per_task);

/// One scheduling decision. `estimates` feeds task-need mode and `gains`
/// feeds performance-gain mode; both must have one entry per task.
AllocationPlan schedule_round(SchedulerMode mode, std::span<const KalmanState> estimates,
                              std::span<const double> gains, const SchedulerParams& params);

}  // namespace mtdagger
