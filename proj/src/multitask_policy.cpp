#include "mtdagger/multitask_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "mtdagger/dataset.hpp"
#include "mtdagger/errors.hpp"

namespace mtdagger {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using ConstMatrixMap = Eigen::Map<const MatrixXd>;
using MatrixMap = Eigen::Map<MatrixXd>;
using ConstVectorMap = Eigen::Map<const VectorXd>;

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

struct Shapes {
  Index obs, act, tasks, enc, emb, hidden, fused, head_in;
};

Shapes shapes_of(const PolicyArchitecture& a) {
  const Index fused = a.encoder_dim + a.embedding_dim;
  return {a.observation_dim, a.action_dim, a.num_tasks, a.encoder_dim, a.embedding_dim,
          a.hidden_width, fused, a.hidden_width > 0 ? a.hidden_width : fused};
}

}  // namespace

PackedDataset PackedDataset::from(const AggregatedDataset& dataset) {
  PackedDataset out;
  const auto& samples = dataset.samples();
  if (samples.empty()) return out;
  const Index obs_dim = samples.front().observation.size();
  const Index act_dim = samples.front().expert_action.size();
  out.observations.resize(obs_dim, static_cast<Index>(samples.size()));
  out.targets.resize(act_dim, static_cast<Index>(samples.size()));
  out.tasks.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.observations.col(static_cast<Index>(i)) = samples[i].observation;
    out.targets.col(static_cast<Index>(i)) = samples[i].expert_action;
    out.tasks[i] = samples[i].task_id;
  }
  return out;
}

MultitaskPolicy::MultitaskPolicy(const PolicyArchitecture& arch) : arch_(arch) {
  if (arch.observation_dim <= 0 || arch.action_dim <= 0 || arch.num_tasks <= 0 ||
      arch.encoder_dim <= 0 || arch.embedding_dim <= 0 || arch.hidden_width < 0) {
    throw OutOfRange("invalid policy architecture");
  }
  layout();
}

MultitaskPolicy::MultitaskPolicy(const PolicyArchitecture& arch, std::uint64_t seed)
    : MultitaskPolicy(arch) {
  Rng rng(seed);
  const Shapes s = shapes_of(arch_);
  auto xavier = [&](const std::string& name, Index fan_in, Index fan_out) {
    const auto& b = block(name);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Index i = 0; i < b.size; ++i) params_[b.offset + i] = dist(rng);
  };
  xavier("encoder.weight", s.obs, s.enc);
  {
    const auto& b = block("embedding");
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(s.emb)));
    for (Index i = 0; i < b.size; ++i) params_[b.offset + i] = dist(rng);
  }
  if (s.hidden > 0) xavier("hidden.weight", s.fused, s.hidden);
  xavier("head.weight", s.head_in, s.act);
}

void MultitaskPolicy::layout() {
  const Shapes s = shapes_of(arch_);
  blocks_.clear();
  Index offset = 0;
  auto add = [&](std::string name, Index size) {
    blocks_.push_back({std::move(name), offset, size});
    offset += size;
  };
  add("encoder.weight", s.enc * s.obs);
  add("encoder.bias", s.enc);
  add("embedding", s.emb * s.tasks);
  if (s.hidden > 0) {
    add("hidden.weight", s.hidden * s.fused);
    add("hidden.bias", s.hidden);
  }
  add("head.weight", s.act * s.head_in);
  add("head.bias", s.act);
  params_ = VectorXd::Zero(offset);
  off_.enc_w = block("encoder.weight").offset;
  off_.enc_b = block("encoder.bias").offset;
  off_.emb = block("embedding").offset;
  if (s.hidden > 0) {
    off_.hid_w = block("hidden.weight").offset;
    off_.hid_b = block("hidden.bias").offset;
  }
  off_.head_w = block("head.weight").offset;
  off_.head_b = block("head.bias").offset;
  reset_optimizer();
}

const ParameterBlock& MultitaskPolicy::block(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw OutOfRange("no parameter block named '" + name + "'");
}

void MultitaskPolicy::set_parameters(const VectorXd& params) {
  if (params.size() != params_.size()) throw OutOfRange("parameter vector has the wrong size");
  params_ = params;
}

void MultitaskPolicy::reset_optimizer() {
  adam_m_ = VectorXd::Zero(params_.size());
  adam_v_ = VectorXd::Zero(params_.size());
  adam_steps_ = 0;
}

void MultitaskPolicy::check_task(int task_id) const {
  if (task_id < 0 || task_id >= arch_.num_tasks) {
    throw UnknownTask("task " + std::to_string(task_id) + " outside [0, " +
                      std::to_string(arch_.num_tasks) + ")");
  }
}

MatrixXd MultitaskPolicy::forward(const MatrixXd& observations, std::span<const int> tasks) const {
  const Shapes s = shapes_of(arch_);
  const Index batch = observations.cols();
  const double* p = params_.data();
  ConstMatrixMap w_enc(p + off_.enc_w, s.enc, s.obs);
  ConstVectorMap b_enc(p + off_.enc_b, s.enc);
  ConstMatrixMap table(p + off_.emb, s.emb, s.tasks);
  ConstMatrixMap w_head(p + off_.head_w, s.act, s.head_in);
  ConstVectorMap b_head(p + off_.head_b, s.act);

  MatrixXd fused(s.fused, batch);
  fused.topRows(s.enc).noalias() = w_enc * observations;
  fused.topRows(s.enc).colwise() += b_enc;
  for (Index b = 0; b < batch; ++b) {
    check_task(tasks[b]);
    fused.col(b).tail(s.emb) = table.col(tasks[b]);
  }
  MatrixXd out(s.act, batch);
  if (s.hidden > 0) {
    ConstMatrixMap w_hid(p + off_.hid_w, s.hidden, s.fused);
    ConstVectorMap b_hid(p + off_.hid_b, s.hidden);
    MatrixXd hidden = w_hid * fused;
    hidden.colwise() += b_hid;
    hidden = hidden.array().tanh();
    out.noalias() = w_head * hidden;
  } else {
    out.noalias() = w_head * fused;
  }
  out.colwise() += b_head;
  return out;
}

Vector MultitaskPolicy::act(const Vector& observation, int task_id) const {
  check_task(task_id);
  if (observation.size() != arch_.observation_dim) {
    throw OutOfRange("observation has dimension " + std::to_string(observation.size()) +
                     ", expected " + std::to_string(arch_.observation_dim));
  }
  const int task[1] = {task_id};
  return forward(observation, task).col(0);
}

double MultitaskPolicy::loss(const MatrixXd& observations, const MatrixXd& targets,
                             std::span<const int> tasks, VectorXd* gradient) const {
  const Shapes s = shapes_of(arch_);
  const Index batch = observations.cols();
  const double* p = params_.data();
  ConstMatrixMap w_enc(p + off_.enc_w, s.enc, s.obs);
  ConstVectorMap b_enc(p + off_.enc_b, s.enc);
  ConstMatrixMap table(p + off_.emb, s.emb, s.tasks);
  ConstMatrixMap w_head(p + off_.head_w, s.act, s.head_in);
  ConstVectorMap b_head(p + off_.head_b, s.act);

  MatrixXd fused(s.fused, batch);
  fused.topRows(s.enc).noalias() = w_enc * observations;
  fused.topRows(s.enc).colwise() += b_enc;
  for (Index b = 0; b < batch; ++b) {
    check_task(tasks[b]);
    fused.col(b).tail(s.emb) = table.col(tasks[b]);
  }

  MatrixXd hidden;
  MatrixXd residual(s.act, batch);
  if (s.hidden > 0) {
    ConstMatrixMap w_hid(p + off_.hid_w, s.hidden, s.fused);
    ConstVectorMap b_hid(p + off_.hid_b, s.hidden);
    hidden.noalias() = w_hid * fused;
    hidden.colwise() += b_hid;
    hidden = hidden.array().tanh();
    residual.noalias() = w_head * hidden;
  } else {
    residual.noalias() = w_head * fused;
  }
  residual.colwise() += b_head;
  residual -= targets;

  const double scale = 1.0 / static_cast<double>(batch * s.act);
  const double value = residual.squaredNorm() * scale;
  if (gradient == nullptr) return value;

  gradient->setZero(params_.size());
  double* g = gradient->data();
  MatrixMap g_enc(g + off_.enc_w, s.enc, s.obs);
  Eigen::Map<VectorXd> gb_enc(g + off_.enc_b, s.enc);
  MatrixMap g_table(g + off_.emb, s.emb, s.tasks);
  MatrixMap g_head(g + off_.head_w, s.act, s.head_in);
  Eigen::Map<VectorXd> gb_head(g + off_.head_b, s.act);

  const MatrixXd d_out = (2.0 * scale) * residual;
  gb_head = d_out.rowwise().sum();
  MatrixXd d_fused;
  if (s.hidden > 0) {
    ConstMatrixMap w_hid(p + off_.hid_w, s.hidden, s.fused);
    MatrixMap g_hid(g + off_.hid_w, s.hidden, s.fused);
    Eigen::Map<VectorXd> gb_hid(g + off_.hid_b, s.hidden);
    g_head.noalias() = d_out * hidden.transpose();
    MatrixXd d_pre = w_head.transpose() * d_out;
    d_pre.array() *= 1.0 - hidden.array().square();
    g_hid.noalias() = d_pre * fused.transpose();
    gb_hid = d_pre.rowwise().sum();
    d_fused.noalias() = w_hid.transpose() * d_pre;
  } else {
    g_head.noalias() = d_out * fused.transpose();
    d_fused.noalias() = w_head.transpose() * d_out;
  }
  g_enc.noalias() = d_fused.topRows(s.enc) * observations.transpose();
  gb_enc = d_fused.topRows(s.enc).rowwise().sum();
  for (Index b = 0; b < batch; ++b) g_table.col(tasks[b]) += d_fused.col(b).tail(s.emb);
  return value;
}

std::vector<double> MultitaskPolicy::per_task_loss(const AggregatedDataset& dataset) const {
  std::vector<double> sums(arch_.num_tasks, 0.0);
  std::vector<std::size_t> counts(arch_.num_tasks, 0);
  if (!dataset.empty()) {
    const PackedDataset packed = PackedDataset::from(dataset);
    const MatrixXd residual = forward(packed.observations, packed.tasks) - packed.targets;
    const Eigen::RowVectorXd per_sample = residual.colwise().squaredNorm();
    for (std::size_t i = 0; i < packed.tasks.size(); ++i) {
      sums[packed.tasks[i]] += per_sample[static_cast<Index>(i)];
      ++counts[packed.tasks[i]];
    }
  }
  std::vector<double> out(arch_.num_tasks, std::numeric_limits<double>::quiet_NaN());
  for (int t = 0; t < arch_.num_tasks; ++t) {
    if (counts[t] > 0) out[t] = sums[t] / static_cast<double>(counts[t] * arch_.action_dim);
  }
  return out;
}

LossEndpoints MultitaskPolicy::train(const AggregatedDataset& dataset,
                                     const TrainingParams& params, Rng& rng) {
  if (dataset.empty()) throw EmptyDataset("cannot train on an empty dataset");

  LossEndpoints out;
  out.start = per_task_loss(dataset);
  if (params.steps > 0 && params.learning_rate > 0.0) {
    const PackedDataset packed = PackedDataset::from(dataset);
    const Index n = packed.observations.cols();
    const Index batch = std::min<Index>(params.batch_size, n);

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::size_t cursor = order.size();

    MatrixXd obs(packed.observations.rows(), batch);
    MatrixXd tgt(packed.targets.rows(), batch);
    std::vector<int> tasks(static_cast<std::size_t>(batch));
    VectorXd grad;

    for (int step = 0; step < params.steps; ++step) {
      const double rate =
          params.linear_decay
              ? params.learning_rate * (1.0 - static_cast<double>(step) / params.steps)
              : params.learning_rate;
      if (batch == n) {
        loss(packed.observations, packed.targets, packed.tasks, &grad);
      } else {
        for (Index b = 0; b < batch; ++b) {
          if (cursor == order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
          }
          const Index idx = order[cursor++];
          obs.col(b) = packed.observations.col(idx);
          tgt.col(b) = packed.targets.col(idx);
          tasks[static_cast<std::size_t>(b)] = packed.tasks[static_cast<std::size_t>(idx)];
        }
        loss(obs, tgt, tasks, &grad);
      }

      if (params.optimizer == TrainingParams::Optimizer::kSgd) {
        params_ -= rate * grad;
      } else {
        ++adam_steps_;
        adam_m_ = kAdamBeta1 * adam_m_ + (1.0 - kAdamBeta1) * grad;
        adam_v_ = kAdamBeta2 * adam_v_ + (1.0 - kAdamBeta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam_steps_));
        const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam_steps_));
        params_.array() -= rate * (adam_m_.array() / c1) /
                           ((adam_v_.array() / c2).sqrt() + kAdamEpsilon);
      }
    }
  }
  out.end = per_task_loss(dataset);
  return out;
}

}  // namespace mtdagger
