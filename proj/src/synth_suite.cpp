#include "mtdagger/synth_suite.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "mtdagger/errors.hpp"

namespace mtdagger {

namespace {

constexpr int kMaxBuildAttempts = 10;
// Each retry tightens the expert's closed loop by this factor.
constexpr double kRetryContraction = 0.8;

Eigen::MatrixXd random_orthogonal(int dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(dim, dim);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ();
}

Vector random_direction(int dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  do {
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  } while (v.norm() < 1e-12);
  return v.normalized();
}

}  // namespace

SuiteConfig default_suite_config(int num_tasks) {
  if (num_tasks < 3 || num_tasks % 3 != 0) {
    throw ValidationError("the default profile needs a task count divisible by 3");
  }
  const int per_tier = num_tasks / 3;
  SuiteConfig config;
  config.num_tasks = num_tasks;
  const auto tier = [per_tier](const char* name, double noise, double gain_min, double gain_max,
                              double c_min, double c_max, double coupling, double bias) {
    DifficultyTier t;
    t.name = name;
    t.count = per_tier;
    t.observation_noise_std = noise;
    t.dynamics_gain_min = gain_min;
    t.dynamics_gain_max = gain_max;
    t.contraction_min = c_min;
    t.contraction_max = c_max;
    t.coupling = coupling;
    t.bias_norm = bias;
    return t;
  };
  config.difficulty_profile = {
      tier("easy", 0.02, 0.90, 0.95, 0.50, 0.60, 0.0, 0.5),
      tier("medium", 0.07, 0.92, 0.97, 0.50, 0.60, 0.3, 1.3),
      tier("hard", 0.16, 1.00, 1.05, 0.65, 0.75, 0.4, 0.7),
  };
  config.start_spread = 0.1;
  return config;
}

// ---------------------------------------------------------------------------

SynthEnvironment::SynthEnvironment(SynthTaskSpec spec)
    : spec_(std::move(spec)), state_(Vector::Zero(spec_.state_dim)) {}

Observation SynthEnvironment::observe(Rng& rng) const {
  Observation obs;
  obs.expert_input = state_;
  obs.policy_input = Vector::Zero(spec_.observation_dim());
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int i = 0; i < spec_.state_dim; ++i) {
    const double nu = spec_.observation_noise_std > 0.0 ? spec_.observation_noise_std * noise(rng)
                                                        : 0.0;
    obs.policy_input[i] = state_[i] + nu;
  }
  obs.policy_input[spec_.state_dim + spec_.task_id] = 1.0;
  return obs;
}

Observation SynthEnvironment::reset(Rng& rng) {
  if (spec_.start_center.size() > 0) {
    std::uniform_real_distribution<double> jitter(-spec_.start_spread, spec_.start_spread);
    Vector start = spec_.start_center;
    for (int i = 0; i < spec_.state_dim; ++i) start[i] += jitter(rng);
    return reset_to(start, rng);
  }
  std::uniform_real_distribution<double> radius(spec_.init_radius_min, spec_.init_radius_max);
  const Vector direction = random_direction(spec_.state_dim, rng);
  return reset_to(radius(rng) * direction, rng);
}

Observation SynthEnvironment::reset_to(const Vector& state, Rng& rng) {
  if (state.size() != spec_.state_dim) throw OutOfRange("state has the wrong dimension");
  state_ = state;
  t_ = 0;
  return observe(rng);
}

StepResult SynthEnvironment::step(const Vector& action, Rng& rng) {
  if (action.size() != spec_.state_dim) throw OutOfRange("action has the wrong dimension");
  std::normal_distribution<double> noise(0.0, 1.0);
  bool finite = true;
  for (int i = 0; i < spec_.state_dim; ++i) {
    const double u = std::clamp(action[i], -spec_.action_limit, spec_.action_limit);
    finite = finite && std::isfinite(action[i]);
    const double eta = spec_.process_noise_std > 0.0 ? spec_.process_noise_std * noise(rng) : 0.0;
    state_[i] = spec_.dynamics_gain * state_[i] + u - spec_.expert_bias[i] + eta;
  }
  ++t_;
  const double radius = state_.norm();
  StepResult out;
  out.success = finite && radius < spec_.success_radius;
  const bool diverged = !finite || !(radius <= spec_.divergence_radius);
  if (diverged) state_ = state_.cwiseMax(-spec_.divergence_radius).cwiseMin(spec_.divergence_radius);
  out.done = out.success || diverged || t_ >= spec_.horizon;
  out.observation = observe(rng);
  return out;
}

LinearExpert::LinearExpert(const SynthTaskSpec& spec)
    : gain_(spec.expert_gain), bias_(spec.expert_bias) {}

Vector LinearExpert::act(const Vector& state) const {
  return bias_ - gain_ * state;
}

// ---------------------------------------------------------------------------

SynthSuite::SynthSuite(SuiteConfig config, std::vector<SynthTask> tasks)
    : config_(std::move(config)), tasks_(std::move(tasks)) {}

int SynthSuite::observation_dim() const {
  return tasks_.empty() ? 0 : tasks_.front().spec.observation_dim();
}

int SynthSuite::action_dim() const { return tasks_.empty() ? 0 : tasks_.front().spec.state_dim; }

std::vector<TaskBinding> SynthSuite::bindings() const {
  std::vector<TaskBinding> out;
  out.reserve(tasks_.size());
  for (const auto& t : tasks_) out.push_back({t.env.get(), t.expert.get()});
  return out;
}

PolicyArchitecture SynthSuite::architecture(int hidden_width, int encoder_dim,
                                            int embedding_dim) const {
  PolicyArchitecture arch;
  arch.observation_dim = observation_dim();
  arch.action_dim = action_dim();
  arch.num_tasks = num_tasks();
  arch.encoder_dim = encoder_dim;
  arch.embedding_dim = embedding_dim;
  arch.hidden_width = hidden_width;
  return arch;
}

double expert_success_rate(const SynthTaskSpec& spec, int episodes, Rng& rng) {
  if (episodes <= 0) return 0.0;
  SynthEnvironment env(spec);
  const LinearExpert expert(spec);
  int successes = 0;
  for (int e = 0; e < episodes; ++e) {
    Observation obs = env.reset(rng);
    for (;;) {
      StepResult step = env.step(expert.act(obs.expert_input), rng);
      if (step.success) ++successes;
      if (step.done) break;
      obs = std::move(step.observation);
    }
  }
  return static_cast<double>(successes) / episodes;
}

SynthSuite build_suite(const SuiteConfig& config) {
  if (config.num_tasks < 1) throw ValidationError("suite needs at least one task (N >= 1)");
  if (config.state_dim < 1) throw ValidationError("state_dim must be >= 1");
  if (config.horizon < 1) throw ValidationError("horizon must be >= 1");
  if (!(config.success_radius > 0.0)) throw ValidationError("success_radius must be > 0");
  if (!(config.init_radius_min >= config.success_radius) ||
      config.init_radius_max < config.init_radius_min) {
    throw ValidationError("initial radius range must start outside the success radius");
  }
  std::vector<DifficultyTier> profile = config.difficulty_profile;
  if (profile.empty()) {
    DifficultyTier all;
    all.name = "uniform";
    all.count = config.num_tasks;
    profile.push_back(all);
  }
  for (const auto& tier : profile) {
    const double spread = tier.start_spread.value_or(config.start_spread);
    if (spread < 0.0) throw ValidationError("start_spread must be >= 0");
    if (!(config.divergence_radius > config.init_radius_max + spread)) {
      throw ValidationError("divergence_radius must exceed init_radius_max + start_spread");
    }
  }
  int listed = 0;
  for (const auto& tier : profile) listed += tier.count;
  if (listed != config.num_tasks) {
    throw ValidationError("difficulty profile covers " + std::to_string(listed) +
                          " tasks but num_tasks is " + std::to_string(config.num_tasks));
  }

  Rng rng = make_stream(config.seed, 0, 0, StreamPurpose::kSuiteBuild);
  std::vector<SynthTask> tasks;
  tasks.reserve(static_cast<std::size_t>(config.num_tasks));
  int task_id = 0;
  for (const auto& tier : profile) {
    std::uniform_real_distribution<double> gain(tier.dynamics_gain_min, tier.dynamics_gain_max);
    std::uniform_real_distribution<double> contraction(tier.contraction_min, tier.contraction_max);
    for (int j = 0; j < tier.count; ++j, ++task_id) {
      SynthTaskSpec spec;
      spec.task_id = task_id;
      spec.num_tasks = config.num_tasks;
      spec.state_dim = config.state_dim;
      spec.tier = tier.name;
      spec.dynamics_gain = gain(rng);
      Vector singular(config.state_dim);
      for (int d = 0; d < config.state_dim; ++d) singular[d] = contraction(rng);
      const Eigen::MatrixXd rotated = random_orthogonal(config.state_dim, rng) *
                                      singular.asDiagonal() *
                                      random_orthogonal(config.state_dim, rng).transpose();
      // Convex mix of two matrices with spectral norm <= max(singular) keeps
      // the closed loop contracting.
      Eigen::MatrixXd closed_loop = (1.0 - tier.coupling) * Eigen::MatrixXd(singular.asDiagonal()) +
                                    tier.coupling * rotated;
      spec.expert_bias = tier.bias_norm * random_direction(config.state_dim, rng);
      spec.observation_noise_std = tier.observation_noise_std;
      spec.process_noise_std = config.process_noise_std;
      spec.horizon = config.horizon;
      spec.success_radius = config.success_radius;
      spec.init_radius_min = config.init_radius_min;
      spec.init_radius_max = config.init_radius_max;
      spec.divergence_radius = config.divergence_radius;
      if (const double spread = tier.start_spread.value_or(config.start_spread); spread > 0.0) {
        std::uniform_real_distribution<double> r(config.init_radius_min, config.init_radius_max);
        spec.start_center = r(rng) * random_direction(config.state_dim, rng);
        spec.start_spread = spread;
      }

      SynthTask task;
      for (int attempt = 1;; ++attempt) {
        spec.expert_gain =
            spec.dynamics_gain * Eigen::MatrixXd::Identity(config.state_dim, config.state_dim) -
            closed_loop;
        Rng check = make_stream(config.seed, static_cast<std::uint64_t>(attempt),
                                static_cast<std::uint64_t>(task_id),
                                StreamPurpose::kExpertValidation);
        task.expert_success = expert_success_rate(spec, config.validation_episodes, check);
        task.build_attempts = attempt;
        if (task.expert_success >= config.min_expert_success) break;
        if (attempt == kMaxBuildAttempts) {
          throw ExpertInvalid("expert for task " + std::to_string(task_id) + " reaches the goal in " +
                              std::to_string(task.expert_success) + " of rollouts after " +
                              std::to_string(attempt) + " attempts");
        }
        closed_loop *= kRetryContraction;
      }
      task.spec = spec;
      task.env = std::make_unique<SynthEnvironment>(spec);
      task.expert = std::make_unique<LinearExpert>(spec);
      tasks.push_back(std::move(task));
    }
  }
  return SynthSuite(config, std::move(tasks));
}

std::vector<double> evaluate_policy(const PolicyFn& policy, const SynthSuite& suite,
                                    int episodes_per_task, Rng& rng) {
  if (episodes_per_task < 1) throw OutOfRange("episodes_per_task must be >= 1");
  const std::uint64_t base = rng();
  std::vector<double> rates(static_cast<std::size_t>(suite.num_tasks()), 0.0);
  for (int i = 0; i < suite.num_tasks(); ++i) {
    Rng task_rng = make_stream(base, 0, static_cast<std::uint64_t>(i), StreamPurpose::kEvaluation);
    SynthEnvironment env(suite.task(i).spec);
    int successes = 0;
    for (int e = 0; e < episodes_per_task; ++e) {
      Observation obs = env.reset(task_rng);
      for (;;) {
        StepResult step = env.step(policy(obs, i), task_rng);
        if (step.success) ++successes;
        if (step.done) break;
        obs = std::move(step.observation);
      }
    }
    rates[static_cast<std::size_t>(i)] = static_cast<double>(successes) / episodes_per_task;
  }
  return rates;
}

std::vector<double> evaluate_policy(const Learner& learner, const SynthSuite& suite,
                                    int episodes_per_task, Rng& rng) {
  return evaluate_policy(
      [&learner](const Observation& obs, int task) { return learner.act(obs.policy_input, task); },
      suite, episodes_per_task, rng);
}

}  // namespace mtdagger
