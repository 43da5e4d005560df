#include "mtdagger/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "mtdagger/errors.hpp"

namespace mtdagger {

std::vector<double> LossEndpoints::gains() const {
  std::vector<double> out(start.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, start[i] - end[i]);
  return out;
}

AggregatedDataset::AggregatedDataset(int num_tasks)
    : per_task_counts_(num_tasks, 0), per_task_episodes_(num_tasks, 0) {}

void AggregatedDataset::append(int task_id, std::span<const LabeledSample> samples, int episodes) {
  if (task_id < 0 || task_id >= num_tasks()) {
    throw UnknownTask("task " + std::to_string(task_id) + " outside dataset range");
  }
  for (const auto& s : samples) {
    if (s.task_id != task_id) throw UnknownTask("sample tagged with a different task");
    samples_.push_back(s);
  }
  per_task_counts_[task_id] += samples.size();
  per_task_episodes_[task_id] += episodes;
}

int AggregatedDataset::total_episodes() const {
  return std::accumulate(per_task_episodes_.begin(), per_task_episodes_.end(), 0);
}

std::vector<std::size_t> AggregatedDataset::task_indices(int task_id) const {
  std::vector<std::size_t> out;
  out.reserve(task_id >= 0 && task_id < num_tasks() ? per_task_counts_[task_id] : 0);
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (samples_[i].task_id == task_id) out.push_back(i);
  }
  return out;
}

}  // namespace mtdagger
