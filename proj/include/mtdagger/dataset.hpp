#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtdagger/interfaces.hpp"

namespace mtdagger {

/// One expert-labelled timestep. `expert_action` is the expert's output at
/// `state`, whichever action was actually executed.
struct LabeledSample {
  Vector observation;
  Vector expert_action;
  int task_id = 0;
  Vector state;  // expert input at this timestep, kept for relabelling audits
};

/// Append-only union of every labelled sample collected so far.
class AggregatedDataset {
 public:
  explicit AggregatedDataset(int num_tasks = 0);

  /// Adds one task's batch. `episodes` is how many demonstrations produced it.
  void append(int task_id, std::span<const LabeledSample> samples, int episodes);

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  int num_tasks() const { return static_cast<int>(per_task_counts_.size()); }

  const std::vector<LabeledSample>& samples() const { return samples_; }
  const LabeledSample& operator[](std::size_t i) const { return samples_[i]; }
  const std::vector<std::size_t>& per_task_counts() const { return per_task_counts_; }
  const std::vector<int>& per_task_episodes() const { return per_task_episodes_; }
  int total_episodes() const;
  /// Indices of the samples belonging to `task_id`, in insertion order.
  std::vector<std::size_t> task_indices(int task_id) const;

 private:
  std::vector<LabeledSample> samples_;
  std::vector<std::size_t> per_task_counts_;
  std::vector<int> per_task_episodes_;
};

}  // namespace mtdagger
