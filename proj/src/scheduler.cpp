#include "mtdagger/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtdagger/errors.hpp"

namespace mtdagger {

namespace {

void check_feasible(std::size_t num_tasks, int budget, int min_per_task) {
  if (num_tasks == 0) throw InfeasibleBudget("no tasks to allocate to");
  if (budget <= 0) throw InfeasibleBudget("budget must be positive");
  if (min_per_task < 0) throw InfeasibleBudget("min_per_task must be >= 0");
  if (static_cast<long long>(num_tasks) * min_per_task > budget) {
    throw InfeasibleBudget("budget " + std::to_string(budget) + " cannot cover " +
                           std::to_string(num_tasks) + " tasks x min " +
                           std::to_string(min_per_task));
  }
}

// Indices ordered by fractional part; `descending` picks the direction, ties by index.
std::vector<std::size_t> order_by_fraction(const std::vector<double>& fractions, bool descending) {
  std::vector<std::size_t> order(fractions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? fractions[a] > fractions[b] : fractions[a] < fractions[b];
  });
  return order;
}

}  // namespace

std::string_view to_string(SchedulerMode mode) {
  switch (mode) {
    case SchedulerMode::kTaskNeed:
      return "task_need";
    case SchedulerMode::kPerformanceGain:
      return "performance_gain";
    case SchedulerMode::kUniform:
      return "uniform";
  }
  return "unknown";
}

SchedulerMode scheduler_mode_from_string(std::string_view name) {
  if (name == "task_need") return SchedulerMode::kTaskNeed;
  if (name == "performance_gain") return SchedulerMode::kPerformanceGain;
  if (name == "uniform") return SchedulerMode::kUniform;
  throw OutOfRange("unknown scheduler mode '" + std::string(name) + "'");
}

int AllocationPlan::total() const { return std::accumulate(counts.begin(), counts.end(), 0); }

double compute_need(double estimate) { return 1.0 - estimate; }

double compute_gain(double loss_start, double loss_end) {
  return std::max(0.0, loss_start - loss_end);
}

std::vector<double> rank_normalize(std::span<const double> metrics) {
  if (metrics.empty()) throw OutOfRange("rank_normalize needs at least one value");
  const std::size_t n = metrics.size();
  std::vector<double> out(n, 0.0);
  if (n == 1) return out;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return metrics[a] < metrics[b]; });
  for (std::size_t rank = 0; rank < n; ++rank) {
    out[order[rank]] = static_cast<double>(rank) / static_cast<double>(n - 1);
  }
  return out;
}

std::vector<double> softmax(std::span<const double> scores, double temperature) {
  if (!(temperature > 0.0)) throw OutOfRange("temperature must be positive");
  if (scores.empty()) return {};
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp((scores[i] - top) / temperature);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

std::vector<int> apportion(std::span<const double> ideal, int budget, int min_per_task) {
  check_feasible(ideal.size(), budget, min_per_task);
  const std::size_t n = ideal.size();

  std::vector<int> counts(n);
  std::vector<double> fractions(n);
  long long assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double target = std::max(static_cast<double>(min_per_task), ideal[i]);
    const double whole = std::floor(target);
    counts[i] = static_cast<int>(whole);
    fractions[i] = target - whole;
    assigned += counts[i];
  }

  long long shortfall = budget - assigned;
  if (shortfall > 0) {
    // shortfall < n because every floor loses less than one unit.
    for (std::size_t i : order_by_fraction(fractions, /*descending=*/true)) {
      if (shortfall == 0) break;
      ++counts[i];
      --shortfall;
    }
  }
  if (shortfall < 0) {
    const auto order = order_by_fraction(fractions, /*descending=*/false);
    while (shortfall < 0) {
      bool removed = false;
      for (std::size_t i : order) {
        if (shortfall == 0) break;
        if (counts[i] > min_per_task) {
          --counts[i];
          ++shortfall;
          removed = true;
        }
      }
      if (!removed) throw InfeasibleBudget("cannot honour floors within budget");
    }
  }
  return counts;
}

AllocationPlan softmax_allocate(std::span<const double> scores, double temperature, int budget,
                                int min_per_task) {
  check_feasible(scores.size(), budget, min_per_task);
  AllocationPlan plan;
  plan.budget = budget;
  plan.min_per_task = min_per_task;
  plan.normalized_scores.assign(scores.begin(), scores.end());
  plan.probabilities = softmax(scores, temperature);

  std::vector<double> ideal(scores.size());
  for (std::size_t i = 0; i < ideal.size(); ++i) ideal[i] = plan.probabilities[i] * budget;
  plan.counts = apportion(ideal, budget, min_per_task);
  return plan;
}

AllocationPlan uniform_allocate(int num_tasks, int budget, int min_per_task) {
  check_feasible(static_cast<std::size_t>(std::max(num_tasks, 0)), budget, min_per_task);
  AllocationPlan plan;
  plan.budget = budget;
  plan.min_per_task = min_per_task;
  plan.counts.assign(num_tasks, budget / num_tasks);
  for (int i = 0; i < budget % num_tasks; ++i) ++plan.counts[i];
  plan.probabilities.assign(num_tasks, 1.0 / num_tasks);
  plan.normalized_scores.assign(num_tasks, 0.0);
  return plan;
}

AllocationPlan schedule_round(SchedulerMode mode, std::span<const KalmanState> estimates,
                              std::span<const double> gains, const SchedulerParams& params) {
  if (estimates.size() != gains.size()) {
    throw OutOfRange("estimates and gains must have one entry per task");
  }
  const int num_tasks = static_cast<int>(estimates.size());
  if (mode == SchedulerMode::kUniform) {
    return uniform_allocate(num_tasks, params.budget, params.min_per_task);
  }

  std::vector<double> metric(estimates.size());
  if (mode == SchedulerMode::kTaskNeed) {
    for (std::size_t i = 0; i < metric.size(); ++i) metric[i] = compute_need(estimates[i].estimate);
  } else {
    metric.assign(gains.begin(), gains.end());
  }
  check_feasible(metric.size(), params.budget, params.min_per_task);

  const auto scores = rank_normalize(metric);
  AllocationPlan plan = softmax_allocate(scores, params.temperature, params.budget,
                                         params.min_per_task);
  plan.raw_metrics = std::move(metric);
  return plan;
}

}  // namespace mtdagger
