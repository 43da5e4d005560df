#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mtdagger/dagger_engine.hpp"
#include "mtdagger/interfaces.hpp"
#include "mtdagger/multitask_policy.hpp"

namespace mtdagger {

/// One goal-reaching task with linear dynamics
///   s' = a s + clip(u) - b + eta,   eta ~ N(0, process_noise^2)
/// and analytic expert u* = -K s + b, so the expert's closed loop is
/// s' = (a I - K) s + eta. The learner observes [s + nu, one_hot(task)]
/// with nu ~ N(0, observation_noise^2). Success is ||s|| < success_radius at
/// any step up to the horizon.
struct SynthTaskSpec {
  int task_id = 0;
  int num_tasks = 1;
  int state_dim = 4;
  std::string tier;
  double dynamics_gain = 1.0;
  Eigen::MatrixXd expert_gain;
  Vector expert_bias;
  double observation_noise_std = 0.0;
  double process_noise_std = 0.0;
  int horizon = 25;
  double success_radius = 0.1;
  double init_radius_min = 0.5;
  double init_radius_max = 1.0;
  /// When non-empty, resets draw start_center + U[-start_spread, start_spread]^d
  /// instead of a random direction at a random radius.
  Vector start_center;
  double start_spread = 0.0;
  double action_limit = 3.0;
  /// Episodes end as failures once ||s|| exceeds this.
  double divergence_radius = 10.0;

  int observation_dim() const { return state_dim + num_tasks; }
};

/// A block of tasks sharing a difficulty range.
struct DifficultyTier {
  std::string name;
  int count = 1;
  double observation_noise_std = 0.0;
  double dynamics_gain_min = 0.95;
  double dynamics_gain_max = 1.0;
  /// Singular values of the expert closed loop a I - K are drawn from this range.
  double contraction_min = 0.5;
  double contraction_max = 0.6;
  /// 0 keeps the closed loop diagonal; 1 makes it a fully rotated matrix.
  double coupling = 0.0;
  /// Norm of the drift the expert must cancel.
  double bias_norm = 0.3;
  /// Replaces SuiteConfig::start_spread for this tier when set.
  std::optional<double> start_spread;
};

struct SuiteConfig {
  int num_tasks = 12;
  /// Tiers fill task ids in order; counts must sum to num_tasks.
  std::vector<DifficultyTier> difficulty_profile;
  std::uint64_t seed = 0;
  int state_dim = 4;
  int horizon = 25;
  double success_radius = 0.1;
  double process_noise_std = 0.005;
  double init_radius_min = 0.5;
  double init_radius_max = 1.0;
  /// Positive: every task starts near its own fixed point (drawn at build
  /// time at a radius in [init_radius_min, init_radius_max]) with this
  /// half-width. Zero: starts are isotropic.
  double start_spread = 0.0;
  double divergence_radius = 10.0;
  int validation_episodes = 1000;
  double min_expert_success = 0.99;
};

/// Three tiers (easy / medium / hard) in equal thirds, N divisible by 3.
SuiteConfig default_suite_config(int num_tasks = 12);

class SynthEnvironment final : public TaskEnvironment {
 public:
  explicit SynthEnvironment(SynthTaskSpec spec);

  Observation reset(Rng& rng) override;
  StepResult step(const Vector& action, Rng& rng) override;

  const SynthTaskSpec& spec() const { return spec_; }
  const Vector& state() const { return state_; }
  /// Places the system at an explicit state (tests, audits).
  Observation reset_to(const Vector& state, Rng& rng);

 private:
  Observation observe(Rng& rng) const;

  SynthTaskSpec spec_;
  Vector state_;
  int t_ = 0;
};

class LinearExpert final : public Expert {
 public:
  explicit LinearExpert(const SynthTaskSpec& spec);
  Vector act(const Vector& state) const override;

 private:
  Eigen::MatrixXd gain_;
  Vector bias_;
};

struct SynthTask {
  SynthTaskSpec spec;
  /// Monte-Carlo expert success measured at build time.
  double expert_success = 0.0;
  int build_attempts = 1;
  std::unique_ptr<SynthEnvironment> env;
  std::unique_ptr<LinearExpert> expert;
};

class SynthSuite {
 public:
  SynthSuite() = default;
  SynthSuite(SuiteConfig config, std::vector<SynthTask> tasks);

  int num_tasks() const { return static_cast<int>(tasks_.size()); }
  int observation_dim() const;
  int action_dim() const;
  const SuiteConfig& config() const { return config_; }
  const std::vector<SynthTask>& tasks() const { return tasks_; }
  const SynthTask& task(int i) const { return tasks_.at(static_cast<std::size_t>(i)); }
  /// Bindings into this suite's own environments; valid while the suite lives.
  std::vector<TaskBinding> bindings() const;
  PolicyArchitecture architecture(int hidden_width = 0, int encoder_dim = 16,
                                  int embedding_dim = 8) const;

 private:
  SuiteConfig config_;
  std::vector<SynthTask> tasks_;
};

/// Deterministic in config.seed. Every expert is validated by Monte-Carlo;
/// a failing task is regenerated with a stronger gain up to 10 times before
/// ExpertInvalid is thrown.
SynthSuite build_suite(const SuiteConfig& config);

/// Fraction of `episodes` expert rollouts that reach the goal.
double expert_success_rate(const SynthTaskSpec& spec, int episodes, Rng& rng);

using PolicyFn = std::function<Vector(const Observation&, int task_id)>;

/// Pure-policy rollouts, `episodes_per_task` per task, returning per-task
/// success fractions. Each task draws from its own substream seeded from
/// `rng`, so checkpoints evaluated with equal seeds face the same starts.
std::vector<double> evaluate_policy(const PolicyFn& policy, const SynthSuite& suite,
                                    int episodes_per_task, Rng& rng);
std::vector<double> evaluate_policy(const Learner& learner, const SynthSuite& suite,
                                    int episodes_per_task, Rng& rng);

}  // namespace mtdagger
