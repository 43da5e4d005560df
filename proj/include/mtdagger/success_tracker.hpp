#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mtdagger {

/// Filtered belief about one task's success probability.
struct KalmanState {
  double estimate = 0.5;   // p-hat, kept in [0, 1]
  double variance = 0.25;  // P, always > 0

  bool operator==(const KalmanState&) const = default;
};

struct FilterParams {
  double process_noise = 0.03;          // Q
  double base_measurement_noise = 0.5;  // R0; effective R = R0 / (n + 1)
};

/// Raw success rate observed over `rollout_count` episodes.
struct SuccessMeasurement {
  double raw_rate = 0.0;
  int rollout_count = 0;

  static SuccessMeasurement from_counts(int successes, int rollouts);

  bool operator==(const SuccessMeasurement&) const = default;
};

/// Throws OutOfRange unless prior_estimate is in [0, 1] and prior_variance > 0.
KalmanState kf_init(double prior_estimate = 0.5, double prior_variance = 0.25);

void validate(const FilterParams& params);

/// Measurement noise after `rollout_count` rollouts: R0 / (n + 1).
double adaptive_measurement_noise(const FilterParams& params, int rollout_count);

/// One predict + update step with adaptive measurement noise:
///   P_pred = P + Q
///   R      = R0 / (n + 1)
///   K      = P_pred / (P_pred + R)
///   p_new  = p + K (p_bar - p), clamped to [0, 1]
///   P_new  = (1 - K) P_pred
/// Callers skip tasks with zero rollouts; see SuccessTracker::observe.
KalmanState kf_update(const KalmanState& state, const FilterParams& params,
                      const SuccessMeasurement& meas);

/// Per-task bank of scalar filters.
class SuccessTracker {
 public:
  SuccessTracker(std::size_t num_tasks, FilterParams params, KalmanState prior = {});

  /// Applies one update per task. Tasks with rollout_count == 0 keep their
  /// state untouched (no predict step either).
  void observe(std::span<const SuccessMeasurement> measurements);

  const std::vector<KalmanState>& states() const { return states_; }
  const FilterParams& params() const { return params_; }

 private:
  FilterParams params_;
  std::vector<KalmanState> states_;
};

}  // namespace mtdagger
