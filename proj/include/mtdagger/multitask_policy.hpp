#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtdagger/interfaces.hpp"

namespace mtdagger {

struct PolicyArchitecture {
  int observation_dim = 0;
  int action_dim = 0;
  int num_tasks = 0;
  int encoder_dim = 16;
  int embedding_dim = 8;
  /// 0 gives a linear head on [h_o, z_i]; > 0 inserts one tanh layer.
  int hidden_width = 0;
};

/// Named contiguous slice of the flat parameter vector.
struct ParameterBlock {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

/// Task-conditioned policy: h_o = W_enc o + b_enc, fused with a learned task
/// embedding z_i by concatenation, then a linear or one-hidden-layer head.
/// Trained on the mean squared action error with Adam or plain SGD.
class MultitaskPolicy final : public Learner {
 public:
  /// Xavier-uniform weights, small random embeddings, zero biases.
  MultitaskPolicy(const PolicyArchitecture& arch, std::uint64_t seed);
  /// All parameters zero.
  explicit MultitaskPolicy(const PolicyArchitecture& arch);

  Vector act(const Vector& observation, int task_id) const override;
  LossEndpoints train(const AggregatedDataset& dataset, const TrainingParams& params,
                      Rng& rng) override;
  std::vector<double> per_task_loss(const AggregatedDataset& dataset) const override;
  int num_tasks() const override { return arch_.num_tasks; }

  /// Batched forward pass; observations are columns.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& observations, std::span<const int> tasks) const;

  /// Mean over the batch and action dimensions of the squared error. When
  /// `gradient` is non-null it receives dLoss/dParameters.
  double loss(const Eigen::MatrixXd& observations, const Eigen::MatrixXd& targets,
              std::span<const int> tasks, Eigen::VectorXd* gradient = nullptr) const;

  const PolicyArchitecture& architecture() const { return arch_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  void set_parameters(const Eigen::VectorXd& params);
  const std::vector<ParameterBlock>& blocks() const { return blocks_; }
  const ParameterBlock& block(const std::string& name) const;
  /// Resets the optimiser moments and step counter.
  void reset_optimizer();

 private:
  void layout();
  void check_task(int task_id) const;

  PolicyArchitecture arch_;
  Eigen::VectorXd params_;
  std::vector<ParameterBlock> blocks_;
  struct {
    Eigen::Index enc_w = 0, enc_b = 0, emb = 0, hid_w = 0, hid_b = 0, head_w = 0, head_b = 0;
  } off_;
  Eigen::VectorXd adam_m_;
  Eigen::VectorXd adam_v_;
  long long adam_steps_ = 0;
};

/// Packs a dataset into column-major matrices for batched evaluation.
struct PackedDataset {
  Eigen::MatrixXd observations;
  Eigen::MatrixXd targets;
  std::vector<int> tasks;

  static PackedDataset from(const AggregatedDataset& dataset);
};

}  // namespace mtdagger
