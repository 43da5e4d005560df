#include "mtdagger/dagger_engine.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>

#include "mtdagger/errors.hpp"

namespace mtdagger {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace

MixingSchedule MixingSchedule::decayed() const {
  MixingSchedule next = *this;
  next.epsilon = std::max(epsilon - decay, floor);
  return next;
}

void MixingSchedule::validate() const {
  require(epsilon >= 0.0 && epsilon <= 1.0, "epsilon must lie in [0, 1]");
  require(decay >= 0.0 && std::isfinite(decay), "epsilon decay must be >= 0");
  require(floor >= 0.0 && floor <= 1.0, "epsilon floor must lie in [0, 1]");
}

void DaggerConfig::validate(int num_tasks) const {
  require(num_tasks >= 1, "suite must contain at least one task");
  require(rounds >= 0, "rounds K must be >= 0");
  require(initial_demos_per_task >= 1, "initial demos per task must be >= 1");
  require(scheduler.budget > 0, "budget B must be positive");
  require(scheduler.min_per_task >= 0, "n_min must be >= 0");
  require(static_cast<long long>(num_tasks) * scheduler.min_per_task <= scheduler.budget,
          "budget B must be >= N * n_min (B=" + std::to_string(scheduler.budget) +
              ", N=" + std::to_string(num_tasks) +
              ", n_min=" + std::to_string(scheduler.min_per_task) + ")");
  require(scheduler.temperature > 0.0 && std::isfinite(scheduler.temperature),
          "temperature T must be positive");
  require(filter.process_noise >= 0.0, "process noise Q must be >= 0");
  require(filter.base_measurement_noise > 0.0, "measurement noise R0 must be > 0");
  require(prior.estimate >= 0.0 && prior.estimate <= 1.0, "prior estimate must lie in [0, 1]");
  require(prior.variance > 0.0, "prior variance must be > 0");
  require(training.steps >= 0, "training steps must be >= 0");
  require(training.batch_size >= 1, "batch size must be >= 1");
  require(training.learning_rate >= 0.0, "learning rate must be >= 0");
  mixing.validate();
}

CollectionResult collect_task_data(int task_id, const Learner* learner, const Expert& expert,
                                   TaskEnvironment& env, int episodes, double epsilon, Rng& rng) {
  if (episodes < 0) throw OutOfRange("episodes must be >= 0");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw OutOfRange("epsilon must lie in [0, 1]");
  if (epsilon < 1.0 && learner == nullptr) {
    throw OutOfRange("a learner is required when epsilon < 1");
  }

  CollectionResult out;
  for (int episode = 0; episode < episodes; ++episode) {
    Observation obs = env.reset(rng);
    bool succeeded = false;
    for (;;) {
      Vector label = expert.act(obs.expert_input);
      const bool use_expert = uniform01(rng) < epsilon;
      Vector action = use_expert ? label : learner->act(obs.policy_input, task_id);
      out.samples.push_back({obs.policy_input, std::move(label), task_id, obs.expert_input});

      StepResult step = env.step(action, rng);
      succeeded = succeeded || step.success;
      obs = std::move(step.observation);
      if (step.done) break;
    }
    if (succeeded) ++out.successes;
  }
  out.timesteps = static_cast<int>(out.samples.size());
  out.measurement = SuccessMeasurement::from_counts(out.successes, episodes);
  return out;
}

LossEndpoints train_initial(Learner& learner, const AggregatedDataset& dataset,
                            const TrainingParams& params, Rng& rng) {
  for (int task = 0; task < dataset.num_tasks(); ++task) {
    if (dataset.per_task_counts()[task] == 0) {
      throw EmptyTaskData("task " + std::to_string(task) + " has no initial demonstrations");
    }
  }
  return learner.train(dataset, params, rng);
}

DaggerResult run_dagger(const DaggerConfig& config, std::span<const TaskBinding> tasks,
                        Learner& learner, const RoundObserver& observer) {
  const int n = static_cast<int>(tasks.size());
  config.validate(n);
  if (learner.num_tasks() != n) {
    throw ValidationError("learner covers " + std::to_string(learner.num_tasks()) +
                          " tasks but the suite has " + std::to_string(n));
  }

  DaggerResult result;
  result.dataset = AggregatedDataset(n);
  auto& dataset = result.dataset;

  auto finish_round = [&](RoundRecord& record) {
    Rng train_rng = make_stream(config.master_seed, record.round_index, 0,
                                StreamPurpose::kTraining);
    const LossEndpoints losses = record.round_index == 0
                                     ? train_initial(learner, dataset, config.training, train_rng)
                                     : learner.train(dataset, config.training, train_rng);
    for (int i = 0; i < n; ++i) {
      auto& m = record.per_task[i];
      m.loss_start = losses.start[i];
      m.loss_end = losses.end[i];
      m.gain = compute_gain(m.loss_start, m.loss_end);
    }
    record.dataset_size = dataset.size();
    record.dataset_episodes = dataset.total_episodes();
    result.records.push_back(record);
    if (observer) observer(result.records.back(), learner);
  };

  // Round 0: pure-expert demonstrations, then plain behaviour cloning.
  {
    RoundRecord record;
    record.round_index = 0;
    record.allocation = uniform_allocate(n, n * config.initial_demos_per_task,
                                         config.initial_demos_per_task);
    record.per_task.resize(n);
    record.epsilon_used = 1.0;
    try {
      for (int i = 0; i < n; ++i) {
        Rng rng = make_stream(config.master_seed, 0, i, StreamPurpose::kInitialDemos);
        auto collected = collect_task_data(i, nullptr, *tasks[i].expert, *tasks[i].env,
                                           config.initial_demos_per_task, 1.0, rng);
        auto& m = record.per_task[i];
        m.raw_success = collected.measurement;
        m.successes = collected.successes;
        m.timesteps = collected.timesteps;
        m.kalman = config.prior;
        m.need_input = config.prior.estimate;
        dataset.append(i, collected.samples, config.initial_demos_per_task);
      }
    } catch (const std::exception& e) {
      result.aborted = true;
      result.error = std::string("round 0: ") + e.what();
      return result;
    }
    finish_round(record);
  }

  SuccessTracker tracker(n, config.filter, config.prior);
  std::vector<double> last_raw(n, config.prior.estimate);
  MixingSchedule mixing = config.mixing;

  for (int k = 1; k <= config.rounds; ++k) {
    const RoundRecord& previous = result.records.back();
    RoundRecord record;
    record.round_index = k;
    record.per_task.resize(n);
    record.epsilon_used = mixing.epsilon;
    record.gain_source_round = previous.round_index;

    // Round 0 ran the expert only, so its success says nothing about the learner.
    if (k >= 2) {
      std::vector<SuccessMeasurement> meas(n);
      for (int i = 0; i < n; ++i) {
        meas[i] = previous.per_task[i].raw_success;
        if (meas[i].rollout_count > 0) last_raw[i] = meas[i].raw_rate;
      }
      tracker.observe(meas);
      record.measurement_source_round = previous.round_index;
    }

    std::vector<KalmanState> need_inputs(n);
    std::vector<double> gains(n);
    for (int i = 0; i < n; ++i) {
      need_inputs[i] = config.use_kalman_filter
                           ? tracker.states()[i]
                           : KalmanState{last_raw[i], tracker.states()[i].variance};
      gains[i] = previous.per_task[i].gain;
      auto& m = record.per_task[i];
      m.kalman = tracker.states()[i];
      m.need_input = need_inputs[i].estimate;
      m.gain_input = gains[i];
    }

    if (config.mode == SchedulerMode::kTaskNeed && record.measurement_source_round < 0) {
      // No learner measurements exist before round 1's collection.
      record.allocation = uniform_allocate(n, config.scheduler.budget,
                                           config.scheduler.min_per_task);
      record.bootstrap_uniform = true;
    } else {
      record.allocation = schedule_round(config.mode, need_inputs, gains, config.scheduler);
    }

    try {
      for (int i = 0; i < n; ++i) {
        Rng rng = make_stream(config.master_seed, k, i, StreamPurpose::kCollection);
        const int episodes = record.allocation.counts[i];
        auto collected = collect_task_data(i, &learner, *tasks[i].expert, *tasks[i].env, episodes,
                                           mixing.epsilon, rng);
        auto& m = record.per_task[i];
        m.raw_success = collected.measurement;
        m.successes = collected.successes;
        m.timesteps = collected.timesteps;
        dataset.append(i, collected.samples, episodes);
      }
    } catch (const std::exception& e) {
      result.aborted = true;
      result.error = "round " + std::to_string(k) + ": " + e.what();
      return result;
    }

    finish_round(record);
    mixing = mixing.decayed();
  }
  return result;
}

}  // namespace mtdagger
