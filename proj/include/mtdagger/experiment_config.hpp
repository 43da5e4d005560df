#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mtdagger/dagger_engine.hpp"
#include "mtdagger/synth_suite.hpp"

namespace mtdagger {

enum class Method {
  kBC,
  kUniformDAgger,
  kTaskNeed,
  kPerformanceGain,
  kTaskNeedNoKalman,
};

std::string_view to_string(Method method);
Method method_from_string(std::string_view name);

/// Everything needed to reproduce one experiment.
struct ExperimentConfig {
  std::string preset = "default";
  Method method = Method::kTaskNeed;
  SuiteConfig suite = default_suite_config(12);

  int rounds = 10;
  int budget_per_round = 24;
  int initial_demos_per_task = 3;
  int min_per_task = 1;
  double temperature = 0.5;
  MixingSchedule epsilon;
  FilterParams filter;
  KalmanState prior;

  TrainingParams training{2000, 128, 3e-3, TrainingParams::Optimizer::kAdam, true};
  /// Optimiser steps for every BC level; 0 matches the cumulative steps a
  /// DAgger run has taken when it reaches the same per-task budget.
  int bc_train_steps = 3000;
  /// Per-task demo levels for the BC curve; empty means the DAgger x-axis.
  std::vector<int> bc_budgets;

  int hidden_width = 32;
  int encoder_dim = 16;
  int embedding_dim = 8;

  int eval_episodes = 50;
  std::vector<double> thresholds = {0.6, 0.8};
  std::uint64_t master_seed = 1;
  int num_seeds = 5;

  /// Throws ValidationError naming the violated invariant.
  void validate() const;

  /// Engine settings for one run of `method` with `seed`.
  DaggerConfig dagger_config(Method method, std::uint64_t seed) const;
  int bc_train_steps_for(int demos_per_task) const;
  /// Per-task demo levels BC is evaluated at.
  std::vector<int> effective_bc_budgets() const;
  std::vector<std::uint64_t> seeds() const;
};

/// Named presets: "default", "metaworld-state-analog", "metaworld-pixel-analog",
/// "isaac-drawer-analog".
ExperimentConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();

/// Structured text (YAML) with sections. `preset` selects the base; every
/// other key overrides it. Unknown keys raise ParseError with the line and,
/// when one is close, the intended spelling.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);

/// Applies `section.key=value` overrides (CLI flags) on top of `config`.
void apply_overrides(ExperimentConfig& config, const std::map<std::string, std::string>& overrides);

/// Canonical text; parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const ExperimentConfig& config);

}  // namespace mtdagger
