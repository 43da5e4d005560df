#include "mtdagger/success_tracker.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtdagger/errors.hpp"

namespace mtdagger {

SuccessMeasurement SuccessMeasurement::from_counts(int successes, int rollouts) {
  if (rollouts < 0 || successes < 0 || successes > rollouts) {
    throw OutOfRange("invalid success count " + std::to_string(successes) + "/" +
                     std::to_string(rollouts));
  }
  if (rollouts == 0) return {0.0, 0};
  return {static_cast<double>(successes) / rollouts, rollouts};
}

KalmanState kf_init(double prior_estimate, double prior_variance) {
  if (!(prior_estimate >= 0.0 && prior_estimate <= 1.0)) {
    throw OutOfRange("prior estimate must lie in [0, 1], got " + std::to_string(prior_estimate));
  }
  if (!(prior_variance > 0.0) || !std::isfinite(prior_variance)) {
    throw OutOfRange("prior variance must be positive, got " + std::to_string(prior_variance));
  }
  return {prior_estimate, prior_variance};
}

void validate(const FilterParams& params) {
  if (!(params.process_noise >= 0.0) || !std::isfinite(params.process_noise)) {
    throw OutOfRange("process noise Q must be >= 0");
  }
  if (!(params.base_measurement_noise > 0.0) || !std::isfinite(params.base_measurement_noise)) {
    throw OutOfRange("base measurement noise R0 must be > 0");
  }
}

double adaptive_measurement_noise(const FilterParams& params, int rollout_count) {
  return params.base_measurement_noise / (static_cast<double>(rollout_count) + 1.0);
}

KalmanState kf_update(const KalmanState& state, const FilterParams& params,
                      const SuccessMeasurement& meas) {
  const double predicted_variance = state.variance + params.process_noise;
  const double noise = adaptive_measurement_noise(params, meas.rollout_count);
  const double gain = predicted_variance / (predicted_variance + noise);

  KalmanState next;
  next.estimate = std::clamp(state.estimate + gain * (meas.raw_rate - state.estimate), 0.0, 1.0);
  next.variance = (1.0 - gain) * predicted_variance;
  return next;
}

SuccessTracker::SuccessTracker(std::size_t num_tasks, FilterParams params, KalmanState prior)
    : params_(params), states_(num_tasks, kf_init(prior.estimate, prior.variance)) {
  validate(params_);
}

void SuccessTracker::observe(std::span<const SuccessMeasurement> measurements) {
  if (measurements.size() != states_.size()) {
    throw OutOfRange("expected " + std::to_string(states_.size()) + " measurements, got " +
                     std::to_string(measurements.size()));
  }
  for (std::size_t i = 0; i < states_.size(); ++i) {
    if (measurements[i].rollout_count <= 0) continue;
    states_[i] = kf_update(states_[i], params_, measurements[i]);
  }
}

}  // namespace mtdagger
