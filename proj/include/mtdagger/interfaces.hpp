#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "mtdagger/random.hpp"

namespace mtdagger {

using Vector = Eigen::VectorXd;

class AggregatedDataset;

/// What an environment exposes at one timestep. The learner sees
/// `policy_input`; the expert acts on the privileged `expert_input`.
struct Observation {
  Vector policy_input;
  Vector expert_input;
};

struct StepResult {
  Observation observation;
  bool done = false;
  bool success = false;
};

class TaskEnvironment {
 public:
  virtual ~TaskEnvironment() = default;
  virtual Observation reset(Rng& rng) = 0;
  virtual StepResult step(const Vector& action, Rng& rng) = 0;
};

/// Deterministic task-specific teacher.
class Expert {
 public:
  virtual ~Expert() = default;
  virtual Vector act(const Vector& expert_input) const = 0;
};

struct TrainingParams {
  enum class Optimizer { kAdam, kSgd };

  int steps = 2000;
  int batch_size = 256;
  double learning_rate = 1e-4;
  Optimizer optimizer = Optimizer::kAdam;
  /// Anneals the rate linearly to zero over each call to train().
  bool linear_decay = false;
};

/// Per-task mean loss before the first and after the last optimisation step.
struct LossEndpoints {
  std::vector<double> start;
  std::vector<double> end;

  std::vector<double> gains() const;
};

/// Shared multitask policy trained by behaviour cloning.
class Learner {
 public:
  virtual ~Learner() = default;
  virtual Vector act(const Vector& observation, int task_id) const = 0;
  /// Runs `params.steps` minibatch steps over the whole dataset.
  virtual LossEndpoints train(const AggregatedDataset& dataset, const TrainingParams& params,
                              Rng& rng) = 0;
  /// Mean loss over each task's samples; NaN for tasks without samples.
  virtual std::vector<double> per_task_loss(const AggregatedDataset& dataset) const = 0;
  virtual int num_tasks() const = 0;
};

}  // namespace mtdagger
