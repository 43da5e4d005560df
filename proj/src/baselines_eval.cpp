#include "mtdagger/baselines_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtdagger/errors.hpp"
#include "mtdagger/multitask_policy.hpp"

namespace mtdagger {

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::uint64_t learner_seed(std::uint64_t seed) {
  Rng rng = make_stream(seed, 0, 0, StreamPurpose::kLearnerInit);
  return rng();
}

// Same seed and round give the same evaluation starts for every method.
std::vector<double> evaluate_checkpoint(const Learner& learner, const SynthSuite& suite,
                                        const ExperimentConfig& config, std::uint64_t seed,
                                        int checkpoint) {
  Rng rng = make_stream(seed, static_cast<std::uint64_t>(checkpoint), 0,
                        StreamPurpose::kEvaluation);
  return evaluate_policy(learner, suite, config.eval_episodes, rng);
}

MethodRun run_bc(const SynthSuite& suite, const ExperimentConfig& config, std::uint64_t seed,
                 const RunHooks& hooks) {
  MethodRun run;
  run.method = Method::kBC;
  run.seed = seed;
  const int n = suite.num_tasks();
  const auto bindings = suite.bindings();
  const auto arch = suite.architecture(config.hidden_width, config.encoder_dim,
                                       config.embedding_dim);

  const auto budgets = config.effective_bc_budgets();
  for (std::size_t level = 0; level < budgets.size(); ++level) {
    const int per_task = budgets[level];
    MultitaskPolicy learner(arch, learner_seed(seed));
    AggregatedDataset dataset(n);
    RoundRecord record;
    record.round_index = static_cast<int>(level);
    record.allocation = uniform_allocate(n, std::max(1, n * per_task), per_task);
    record.per_task.resize(static_cast<std::size_t>(n));

    // Streams are shared across levels, so smaller budgets see a prefix of
    // the larger budgets' demonstrations.
    for (int i = 0; i < n && per_task > 0; ++i) {
      Rng rng = make_stream(seed, 0, static_cast<std::uint64_t>(i), StreamPurpose::kInitialDemos);
      auto collected = collect_task_data(i, nullptr, *bindings[i].expert, *bindings[i].env,
                                         per_task, 1.0, rng);
      auto& m = record.per_task[static_cast<std::size_t>(i)];
      m.raw_success = collected.measurement;
      m.successes = collected.successes;
      m.timesteps = collected.timesteps;
      dataset.append(i, collected.samples, per_task);
    }
    if (!dataset.empty()) {
      TrainingParams training = config.training;
      training.steps = config.bc_train_steps_for(per_task);
      Rng train_rng = make_stream(seed, 0, 0, StreamPurpose::kTraining);
      const auto losses = learner.train(dataset, training, train_rng);
      for (int i = 0; i < n; ++i) {
        auto& m = record.per_task[static_cast<std::size_t>(i)];
        m.loss_start = losses.start[static_cast<std::size_t>(i)];
        m.loss_end = losses.end[static_cast<std::size_t>(i)];
        m.gain = compute_gain(m.loss_start, m.loss_end);
      }
    }
    record.dataset_size = dataset.size();
    record.dataset_episodes = dataset.total_episodes();

    CurvePoint point;
    point.round = static_cast<int>(level);
    point.cumulative_demos_per_task = per_task;
    point.cumulative_timesteps = static_cast<long long>(dataset.size());
    point.per_task_success = evaluate_checkpoint(learner, suite, config, seed, 0);
    point.mean_success = mean_of(point.per_task_success);
    point.seed = seed;
    run.curve.push_back(point);
    run.records.push_back(record);
    if (hooks.on_round) hooks.on_round(record, point);
  }
  return run;
}

MethodRun run_dagger_method(Method method, const SynthSuite& suite,
                            const ExperimentConfig& config, std::uint64_t seed,
                            const RunHooks& hooks) {
  MethodRun run;
  run.method = method;
  run.seed = seed;
  const int n = suite.num_tasks();
  MultitaskPolicy learner(
      suite.architecture(config.hidden_width, config.encoder_dim, config.embedding_dim),
      learner_seed(seed));

  const auto observer = [&](const RoundRecord& record, const Learner& trained) {
    CurvePoint point;
    point.round = record.round_index;
    point.cumulative_demos_per_task = static_cast<double>(record.dataset_episodes) / n;
    point.cumulative_timesteps = static_cast<long long>(record.dataset_size);
    point.per_task_success = evaluate_checkpoint(trained, suite, config, seed, record.round_index);
    point.mean_success = mean_of(point.per_task_success);
    point.seed = seed;
    run.curve.push_back(point);
    if (hooks.on_round) hooks.on_round(record, point);
  };

  const auto bindings = suite.bindings();
  DaggerResult result = run_dagger(config.dagger_config(method, seed), bindings, learner, observer);
  run.records = std::move(result.records);
  run.aborted = result.aborted;
  run.error = std::move(result.error);
  return run;
}

}  // namespace

MethodRun run_method_seed(Method method, const SynthSuite& suite, const ExperimentConfig& config,
                          std::uint64_t seed, const RunHooks& hooks) {
  if (method == Method::kBC) return run_bc(suite, config, seed, hooks);
  return run_dagger_method(method, suite, config, seed, hooks);
}

std::vector<MethodRun> run_method(Method method, const SynthSuite& suite,
                                  const ExperimentConfig& config,
                                  std::span<const std::uint64_t> seeds) {
  std::vector<MethodRun> runs;
  runs.reserve(seeds.size());
  for (std::uint64_t seed : seeds) runs.push_back(run_method_seed(method, suite, config, seed));
  return runs;
}

std::optional<double> first_crossing(std::span<const CurvePoint> curve, double threshold) {
  for (std::size_t j = 0; j < curve.size(); ++j) {
    const auto& p = curve[j];
    if (p.mean_success < threshold) continue;
    if (j == 0) return p.cumulative_demos_per_task;
    const auto& q = curve[j - 1];
    const double dy = p.mean_success - q.mean_success;
    const double frac = dy > 0.0 ? (threshold - q.mean_success) / dy : 1.0;
    return q.cumulative_demos_per_task +
           frac * (p.cumulative_demos_per_task - q.cumulative_demos_per_task);
  }
  return std::nullopt;
}

ThresholdResult demos_to_threshold(std::span<const MethodRun> runs, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw OutOfRange("threshold must lie in (0, 1]");
  ThresholdResult out;
  out.reached = !runs.empty();
  std::vector<double> values;
  for (const auto& run : runs) {
    out.per_seed.push_back(first_crossing(run.curve, threshold));
    if (out.per_seed.back()) {
      values.push_back(*out.per_seed.back());
    } else {
      out.reached = false;
    }
  }
  if (!values.empty()) {
    out.mean = mean_of(values);
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stddev = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
  }
  return out;
}

HardestTaskReport hardest_task_report(const std::map<Method, std::vector<MethodRun>>& runs) {
  HardestTaskReport report;
  std::size_t num_tasks = 0;
  int counted = 0;
  for (const auto& [method, list] : runs) {
    for (const auto& run : list) {
      if (run.curve.empty()) continue;
      const auto& last = run.curve.back().per_task_success;
      if (num_tasks == 0) {
        num_tasks = last.size();
        report.final_success.assign(num_tasks, 0.0);
      }
      for (std::size_t i = 0; i < num_tasks; ++i) report.final_success[i] += last[i];
      ++counted;
    }
  }
  if (counted == 0) throw OutOfRange("hardest_task_report needs at least one completed run");
  for (double& v : report.final_success) v /= counted;
  report.task = static_cast<int>(
      std::min_element(report.final_success.begin(), report.final_success.end()) -
      report.final_success.begin());

  const auto task = static_cast<std::size_t>(report.task);
  for (const auto& [method, list] : runs) {
    std::size_t len = 0;
    for (const auto& run : list) len = std::max(len, run.curve.size());
    std::vector<std::pair<double, double>> curve;
    for (std::size_t j = 0; j < len; ++j) {
      double x = 0.0, y = 0.0;
      int c = 0;
      for (const auto& run : list) {
        if (j >= run.curve.size()) continue;
        x += run.curve[j].cumulative_demos_per_task;
        y += run.curve[j].per_task_success[task];
        ++c;
      }
      if (c > 0) curve.emplace_back(x / c, y / c);
    }
    if (!curve.empty()) report.final_task_success[method] = curve.back().second;
    report.curves[method] = std::move(curve);
  }
  return report;
}

double mean_allocation_churn(const MethodRun& run) {
  double total = 0.0;
  int pairs = 0;
  for (std::size_t k = 2; k < run.records.size(); ++k) {
    const auto& a = run.records[k - 1].allocation.probabilities;
    const auto& b = run.records[k].allocation.probabilities;
    double tv = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) tv += std::abs(a[i] - b[i]);
    total += 0.5 * tv;
    ++pairs;
  }
  return pairs > 0 ? total / pairs : 0.0;
}

}  // namespace mtdagger
