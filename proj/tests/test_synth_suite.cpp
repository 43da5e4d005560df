#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mtdagger/baselines_eval.hpp"
#include "mtdagger/dagger_engine.hpp"
#include "mtdagger/errors.hpp"
#include "mtdagger/experiment_config.hpp"
#include "mtdagger/multitask_policy.hpp"
#include "mtdagger/synth_suite.hpp"
#include "support/oracles.hpp"

using namespace mtdagger;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

SuiteConfig single_task(double noise) {
  SuiteConfig s;
  s.num_tasks = 1;
  DifficultyTier tier;
  tier.name = "only";
  tier.count = 1;
  tier.observation_noise_std = noise;
  s.difficulty_profile = {tier};
  return s;
}

PolicyArchitecture random_arch(gen::Engine& g) {
  PolicyArchitecture a;
  a.num_tasks = gen::integer(g, 1, 4);
  a.observation_dim = gen::integer(g, 1, 5) + a.num_tasks;
  a.action_dim = gen::integer(g, 1, 4);
  a.encoder_dim = gen::integer(g, 1, 6);
  a.embedding_dim = gen::integer(g, 1, 4);
  a.hidden_width = gen::integer(g, 0, 1) == 0 ? 0 : gen::integer(g, 1, 8);
  return a;
}

/// Learner whose encoder is a fixed random map and whose head is zero, so
/// it outputs zero everywhere but can fit any linear map through the head.
MultitaskPolicy zero_output_linear(const PolicyArchitecture& arch) {
  MultitaskPolicy seeded(arch, 5);
  MultitaskPolicy policy(arch);
  VectorXd p = VectorXd::Zero(policy.parameters().size());
  const auto& enc = policy.block("encoder.weight");
  p.segment(enc.offset, enc.size) = seeded.parameters().segment(enc.offset, enc.size);
  policy.set_parameters(p);
  return policy;
}

/// Samples of a* = 2 s on uniformly drawn s, observed without noise.
AggregatedDataset doubling_dataset(int state_dim, int samples, gen::Engine& g) {
  AggregatedDataset data(1);
  std::vector<LabeledSample> batch;
  for (int j = 0; j < samples; ++j) {
    VectorXd s(state_dim);
    for (int d = 0; d < state_dim; ++d) s[d] = gen::uniform(g, -1.0, 1.0);
    VectorXd o(state_dim + 1);
    o << s, 1.0;
    batch.push_back({o, 2.0 * s, 0, s});
  }
  data.append(0, batch, 1);
  return data;
}

}  // namespace

TEST_CASE("suite construction") {
  SUBCASE("single noiseless task") {
    const SynthSuite suite = build_suite(single_task(0.0));
    REQUIRE(suite.num_tasks() == 1);
    Rng rng(1);
    CHECK(expert_success_rate(suite.task(0).spec, 100, rng) == 1.0);
  }
  SUBCASE("no tasks") {
    SuiteConfig s = single_task(0.0);
    s.num_tasks = 0;
    s.difficulty_profile.clear();
    CHECK_THROWS_AS(build_suite(s), ValidationError);
  }
  SUBCASE("tier counts must cover the suite") {
    SuiteConfig s = single_task(0.0);
    s.num_tasks = 2;
    CHECK_THROWS_AS(build_suite(s), ValidationError);
  }
  SUBCASE("default profile needs thirds") { CHECK_THROWS_AS(default_suite_config(10), ValidationError); }
}

TEST_CASE("default suite experts are validated and difficulty varies") {
  const SuiteConfig config = default_suite_config(12);
  const SynthSuite suite = build_suite(config);
  REQUIRE(suite.num_tasks() == 12);
  std::vector<double> noise;
  for (const auto& t : suite.tasks()) {
    CHECK(t.expert_success >= 0.99);
    noise.push_back(t.spec.observation_noise_std);
  }
  CHECK(*std::max_element(noise.begin(), noise.end()) > *std::min_element(noise.begin(), noise.end()));
  for (int i = 0; i < 4; ++i) CHECK(suite.task(i).spec.tier == "easy");
  for (int i = 8; i < 12; ++i) CHECK(suite.task(i).spec.tier == "hard");

  // Independent Monte-Carlo re-check with fresh draws.
  for (const auto& t : suite.tasks()) {
    Rng rng(1000 + t.spec.task_id);
    CHECK(expert_success_rate(t.spec, 1000, rng) >= 0.98);
  }
}

TEST_CASE("suite build is deterministic in its seed") {
  const SuiteConfig config = default_suite_config(12);
  const SynthSuite a = build_suite(config);
  const SynthSuite b = build_suite(config);
  for (int i = 0; i < 12; ++i) {
    CHECK(a.task(i).spec.dynamics_gain == b.task(i).spec.dynamics_gain);
    CHECK(a.task(i).spec.expert_gain == b.task(i).spec.expert_gain);
    CHECK(a.task(i).spec.expert_bias == b.task(i).spec.expert_bias);
  }
  SuiteConfig other = config;
  other.seed = 99;
  CHECK(build_suite(other).task(0).spec.expert_bias != a.task(0).spec.expert_bias);
}

TEST_CASE("36-task profile mirrors the large benchmark count") {
  const SynthSuite suite = build_suite(default_suite_config(36));
  CHECK(suite.num_tasks() == 36);
  CHECK(suite.task(35).spec.tier == "hard");
}

TEST_CASE("environment dynamics follow the linear update") {
  SuiteConfig cfg = single_task(0.0);
  cfg.process_noise_std = 0.0;
  const SynthSuite suite = build_suite(cfg);
  const auto& spec = suite.task(0).spec;
  SynthEnvironment env(spec);
  Rng rng(2);
  VectorXd s(4);
  s << 0.5, -0.2, 0.1, 0.3;
  const Observation o = env.reset_to(s, rng);
  CHECK(o.policy_input.size() == spec.observation_dim());
  CHECK(o.policy_input.head(4) == s);
  CHECK(o.policy_input[4] == 1.0);
  VectorXd u(4);
  u << 0.1, 0.2, -0.3, 0.0;
  env.step(u, rng);
  const VectorXd expected = spec.dynamics_gain * s + u - spec.expert_bias;
  CHECK((env.state() - expected).norm() < 1e-15);

  env.reset_to(s, rng);
  env.step(VectorXd::Constant(4, 100.0), rng);
  const VectorXd clipped = spec.dynamics_gain * s + VectorXd::Constant(4, spec.action_limit) - spec.expert_bias;
  CHECK((env.state() - clipped).norm() < 1e-15);
}

TEST_CASE("expert drives the state to the goal") {
  SuiteConfig cfg = single_task(0.0);
  cfg.process_noise_std = 0.0;
  const SynthSuite suite = build_suite(cfg);
  SynthEnvironment env(suite.task(0).spec);
  Rng rng(3);
  Observation o = env.reset(rng);
  bool success = false;
  for (int t = 0; t < 25 && !success; ++t) {
    const StepResult r = env.step(suite.task(0).expert->act(o.expert_input), rng);
    success = r.success;
    o = r.observation;
  }
  CHECK(success);
}

TEST_CASE("learner outputs") {
  const SynthSuite suite = build_suite(default_suite_config(12));
  const PolicyArchitecture arch = suite.architecture();

  SUBCASE("zero weights give zero action") {
    const MultitaskPolicy zero(arch);
    gen::Engine g(1);
    for (int trial = 0; trial < 20; ++trial) {
      VectorXd o = VectorXd::Random(arch.observation_dim) * 5.0;
      CHECK(zero.act(o, gen::integer(g, 0, 11)).norm() == 0.0);
    }
  }
  SUBCASE("distinct embeddings give distinct actions") {
    const MultitaskPolicy policy(arch, 7);
    const VectorXd o = VectorXd::Constant(arch.observation_dim, 0.3);
    CHECK((policy.act(o, 0) - policy.act(o, 1)).norm() > 1e-6);
  }
  SUBCASE("unknown tasks are rejected") {
    const MultitaskPolicy policy(arch, 7);
    CHECK_THROWS_AS(policy.act(VectorXd::Zero(arch.observation_dim), 12), UnknownTask);
  }
  SUBCASE("outputs stay finite") {
    PolicyArchitecture wide = arch;
    wide.hidden_width = 16;
    const MultitaskPolicy policy(wide, 3);
    const VectorXd o = VectorXd::Constant(arch.observation_dim, 1e6);
    CHECK(policy.act(o, 4).allFinite());
  }
}

TEST_CASE("analytic gradients match central differences") {
  gen::Engine g(8);
  for (int instance = 0; instance < 20; ++instance) {
    const PolicyArchitecture arch = random_arch(g);
    MultitaskPolicy policy(arch, 100 + instance);
    const int batch = gen::integer(g, 1, 6);
    MatrixXd obs = MatrixXd::Random(arch.observation_dim, batch);
    MatrixXd tgt = MatrixXd::Random(arch.action_dim, batch);
    std::vector<int> tasks;
    for (int b = 0; b < batch; ++b) tasks.push_back(gen::integer(g, 0, arch.num_tasks - 1));

    VectorXd analytic;
    policy.loss(obs, tgt, tasks, &analytic);
    const VectorXd base = policy.parameters();
    VectorXd numeric(base.size());
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < base.size(); ++j) {
      VectorXd p = base;
      p[j] += h;
      policy.set_parameters(p);
      const double up = policy.loss(obs, tgt, tasks);
      p[j] = base[j] - h;
      policy.set_parameters(p);
      const double down = policy.loss(obs, tgt, tasks);
      numeric[j] = (up - down) / (2.0 * h);
    }
    policy.set_parameters(base);
    for (const auto& block : policy.blocks()) {
      const VectorXd a = analytic.segment(block.offset, block.size);
      const VectorXd n = numeric.segment(block.offset, block.size);
      const double scale = std::max({a.norm(), n.norm(), 1e-8});
      CAPTURE(instance);
      CAPTURE(block.name);
      CHECK((a - n).norm() / scale < 1e-4);
    }
  }
}

TEST_CASE("loss is a mean over samples and action dimensions") {
  PolicyArchitecture arch{3, 2, 2, 4, 2, 0};
  MultitaskPolicy policy(arch, 1);
  MatrixXd obs = MatrixXd::Random(3, 5);
  MatrixXd tgt = MatrixXd::Random(2, 5);
  const std::vector<int> tasks = {0, 1, 0, 1, 1};
  const MatrixXd pred = policy.forward(obs, tasks);
  CHECK(policy.loss(obs, tgt, tasks) == doctest::Approx((pred - tgt).squaredNorm() / 10.0));
}

TEST_CASE("per-task losses decouple and sum to the total") {
  PolicyArchitecture arch{3, 2, 2, 4, 2, 0};
  MultitaskPolicy policy(arch, 2);
  AggregatedDataset data(2);
  gen::Engine g(3);
  for (int task = 0; task < 2; ++task) {
    std::vector<LabeledSample> batch;
    for (int j = 0; j < 7 + task; ++j) {
      VectorXd o = VectorXd::Random(3) + VectorXd::Constant(3, task == 0 ? -3.0 : 3.0);
      batch.push_back({o, VectorXd::Random(2), task, o});
    }
    data.append(task, batch, 1);
  }
  const auto per_task = policy.per_task_loss(data);
  const PackedDataset packed = PackedDataset::from(data);
  const double total = policy.loss(packed.observations, packed.targets, packed.tasks);
  const double weighted = (per_task[0] * 7 + per_task[1] * 8) / 15.0;
  CHECK(total == doctest::Approx(weighted).epsilon(1e-12));

  AggregatedDataset only_first(2);
  only_first.append(0, std::vector<LabeledSample>(data.samples().begin(), data.samples().begin() + 7), 1);
  const auto alone = policy.per_task_loss(only_first);
  CHECK(alone[0] == doctest::Approx(per_task[0]).epsilon(1e-14));
  CHECK(std::isnan(alone[1]));
}

TEST_CASE("training a converged learner changes nothing") {
  PolicyArchitecture arch{5, 4, 1, 6, 3, 0};
  MultitaskPolicy policy(arch);
  AggregatedDataset data(1);
  std::vector<LabeledSample> batch;
  for (int j = 0; j < 20; ++j) batch.push_back({VectorXd::Random(5), VectorXd::Zero(4), 0, VectorXd::Zero(4)});
  data.append(0, batch, 1);
  Rng rng(1);
  const LossEndpoints l = policy.train(data, {100, 8, 1e-2}, rng);
  CHECK(l.start[0] == 0.0);
  CHECK(l.end[0] == 0.0);
  CHECK(l.gains()[0] == 0.0);
}

TEST_CASE("zero learning rate leaves losses unchanged") {
  PolicyArchitecture arch{5, 4, 1, 6, 3, 8};
  MultitaskPolicy policy(arch, 4);
  gen::Engine g(4);
  const AggregatedDataset data = doubling_dataset(4, 50, g);
  const VectorXd before = policy.parameters();
  Rng rng(1);
  const LossEndpoints l = policy.train(data, {200, 16, 0.0}, rng);
  CHECK(l.start[0] == l.end[0]);
  CHECK(l.gains()[0] == 0.0);
  CHECK(policy.parameters() == before);
}

TEST_CASE("fitting a single linear expert reaches the least-squares solution") {
  const PolicyArchitecture arch{5, 4, 1, 8, 2, 0};
  MultitaskPolicy policy = zero_output_linear(arch);
  gen::Engine g(5);
  const AggregatedDataset data = doubling_dataset(4, 400, g);
  Rng rng(2);
  TrainingParams params{4000, 64, 1e-2};
  params.linear_decay = true;
  const LossEndpoints l = policy.train(data, params, rng);
  CHECK(l.end[0] < 0.01 * l.start[0]);

  // Normal equations on [s, 1].
  const PackedDataset packed = PackedDataset::from(data);
  MatrixXd X(packed.observations.cols(), 5);
  X << packed.observations.topRows(4).transpose(), VectorXd::Ones(X.rows());
  const MatrixXd W = (X.transpose() * X).ldlt().solve(X.transpose() * packed.targets.transpose());

  double learner_err = 0.0, oracle_err = 0.0;
  for (int j = 0; j < 1000; ++j) {
    VectorXd s(4);
    for (int d = 0; d < 4; ++d) s[d] = gen::uniform(g, -1.0, 1.0);
    VectorXd o(5);
    o << s, 1.0;
    learner_err += (policy.act(o, 0) - 2.0 * s).squaredNorm() / 4.0;
    oracle_err += (W.transpose() * o - 2.0 * s).squaredNorm() / 4.0;
  }
  CHECK(oracle_err / 1000 < 1e-20);
  CHECK(learner_err / 1000 < 1e-3);
}

TEST_CASE("full-batch gradient descent decreases the loss monotonically") {
  const PolicyArchitecture arch{5, 4, 1, 8, 2, 0};
  MultitaskPolicy policy = zero_output_linear(arch);
  gen::Engine g(6);
  const AggregatedDataset data = doubling_dataset(4, 40, g);
  const PackedDataset packed = PackedDataset::from(data);
  TrainingParams params{1, 1000, 1e-2, TrainingParams::Optimizer::kSgd};
  Rng rng(1);
  double previous = policy.per_task_loss(data)[0];
  for (int step = 0; step < 200; ++step) {
    VectorXd grad;
    policy.loss(packed.observations, packed.targets, packed.tasks, &grad);
    const VectorXd expected = policy.parameters() - params.learning_rate * grad;
    const LossEndpoints l = policy.train(data, params, rng);
    REQUIRE((policy.parameters() - expected).norm() < 1e-14);
    REQUIRE(l.end[0] < previous);
    previous = l.end[0];
  }
}

TEST_CASE("evaluation of reference policies") {
  const SynthSuite suite = build_suite(default_suite_config(12));
  Rng rng(9);
  const PolicyFn expert = [&](const Observation& o, int task) {
    return suite.task(task).expert->act(o.expert_input);
  };
  for (double rate : evaluate_policy(expert, suite, 200, rng)) CHECK(rate >= 0.97);

  const PolicyFn zero = [&](const Observation& o, int) {
    return VectorXd::Zero(o.expert_input.size()).eval();
  };
  Rng rng2(9);
  for (double rate : evaluate_policy(zero, suite, 100, rng2)) CHECK(rate <= 0.05);
  CHECK_THROWS_AS(evaluate_policy(zero, suite, 0, rng2), OutOfRange);
}

TEST_CASE("a fitted learner solves a noiseless task") {
  SuiteConfig cfg = single_task(0.0);
  cfg.process_noise_std = 0.0;
  const SynthSuite suite = build_suite(cfg);
  const PolicyArchitecture arch = suite.architecture(0, 8, 2);
  MultitaskPolicy policy = zero_output_linear(arch);
  AggregatedDataset data(1);
  const auto bindings = suite.bindings();
  Rng rng(3);
  const auto collected = collect_task_data(0, nullptr, *bindings[0].expert, *bindings[0].env, 30, 1.0, rng);
  data.append(0, collected.samples, 30);
  TrainingParams params{5000, 64, 1e-2};
  params.linear_decay = true;
  policy.train(data, params, rng);
  Rng eval(4);
  CHECK(evaluate_policy(policy, suite, 100, eval)[0] == 1.0);
}

TEST_CASE("evaluation matches pure-learner collection in expectation") {
  const SynthSuite suite = build_suite(default_suite_config(12));
  MultitaskPolicy policy(suite.architecture(), 11);
  // A rough policy with intermediate success: a few steps on expert data.
  {
    AggregatedDataset data(12);
    const auto bindings = suite.bindings();
    for (int i = 0; i < 12; ++i) {
      Rng rng(50 + i);
      const auto c = collect_task_data(i, nullptr, *bindings[i].expert, *bindings[i].env, 3, 1.0, rng);
      data.append(i, c.samples, 3);
    }
    Rng rng(1);
    policy.train(data, {400, 64, 3e-3}, rng);
  }
  const auto bindings = suite.bindings();
  double total_diff = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng eval_rng(seed);
    const auto evaluated = evaluate_policy(policy, suite, 40, eval_rng);
    double diff = 0.0;
    for (int i = 0; i < 12; ++i) {
      Rng rng(7000 + seed * 12 + i);
      const auto c = collect_task_data(i, &policy, *bindings[i].expert, *bindings[i].env, 40, 0.0, rng);
      diff += c.measurement.raw_rate - evaluated[static_cast<std::size_t>(i)];
    }
    total_diff += std::abs(diff / 12.0);
  }
  CHECK(total_diff / 20.0 < 0.05);
}

TEST_CASE("task embeddings carry load after training") {
  ExperimentConfig cfg = preset_config("default");
  const SynthSuite suite = build_suite(cfg.suite);
  MultitaskPolicy policy(suite.architecture(cfg.hidden_width, cfg.encoder_dim, cfg.embedding_dim), 3);
  AggregatedDataset data(12);
  const auto bindings = suite.bindings();
  for (int i = 0; i < 12; ++i) {
    Rng rng(80 + i);
    const auto c = collect_task_data(i, nullptr, *bindings[i].expert, *bindings[i].env, 5, 1.0, rng);
    data.append(i, c.samples, 5);
  }
  Rng rng(2);
  policy.train(data, cfg.training, rng);
  const PackedDataset packed = PackedDataset::from(data);
  const double trained = policy.loss(packed.observations, packed.targets, packed.tasks);
  VectorXd p = policy.parameters();
  const auto& emb = policy.block("embedding");
  p.segment(emb.offset, emb.size).setZero();
  policy.set_parameters(p);
  CHECK(policy.loss(packed.observations, packed.targets, packed.tasks) > trained);
}

TEST_CASE("one-round behaviour cloning gets harder with observation noise") {
  // Same dynamics everywhere; only the noise level differs across tasks.
  SuiteConfig cfg;
  cfg.num_tasks = 6;
  const double levels[] = {0.0, 0.02, 0.05, 0.1, 0.2, 0.4};
  for (int i = 0; i < 6; ++i) {
    DifficultyTier t;
    t.name = "n" + std::to_string(i);
    t.count = 1;
    t.observation_noise_std = levels[i];
    t.dynamics_gain_min = t.dynamics_gain_max = 1.0;
    t.contraction_min = t.contraction_max = 0.6;
    cfg.difficulty_profile.push_back(t);
  }
  ExperimentConfig exp = preset_config("default");
  exp.suite = cfg;
  exp.rounds = 0;
  exp.bc_budgets = {5};
  exp.num_seeds = 3;
  const SynthSuite suite = build_suite(cfg);
  const auto runs = run_method(Method::kBC, suite, exp, exp.seeds());
  std::vector<double> mean(6, 0.0);
  for (const auto& r : runs) {
    for (int i = 0; i < 6; ++i) mean[i] += r.curve.back().per_task_success[i] / runs.size();
  }
  std::vector<double> noise(levels, levels + 6);
  CAPTURE(mean[0]);
  CAPTURE(mean[5]);
  CHECK(oracle::spearman(noise, mean) < -0.8);
}
