#pragma once

#include <cstdint>
#include <random>

#include "crs/models.hpp"

namespace crs {

enum class MeasurementKind { FullState, Pose, Imu };

struct Measurement {
  MeasurementKind kind;
  Vec values;        // Pose: [x_p, y_p, psi]; Imu: [vdot_x, vdot_y, omega]
  double stamp = 0;  // seconds since episode start
  std::uint64_t seq = 0;
};

struct SensorConfig {
  double rate_hz = 100.0;
  Vec noise_std;  // per-channel standard deviation, empty = noiseless
  double latency = 0.0;
  std::uint64_t seed = 0;
  void validate() const;
};

using Rng = std::mt19937_64;

/// Pose measurement (x_p, y_p, psi) with Gaussian noise; psi wrapped to (-pi, pi].
Measurement measure_pose(const Vec& x_true, const SensorConfig& cfg, Rng& rng, double stamp = 0,
                         std::uint64_t seq = 0);

/// IMU measurement (vdot_x, vdot_y, omega) through the dynamic model's force
/// laws. Requires a dynamic-model (6-dim) state.
Measurement measure_imu(const Vec& x_true, const Vec2& u, const ModelParams& params,
                        const SensorConfig& cfg, Rng& rng, double stamp = 0, std::uint64_t seq = 0);

/// Identity on the state vector plus optional noise.
Measurement measure_full_state(const Vec& x_true, const SensorConfig& cfg, Rng& rng,
                               double stamp = 0, std::uint64_t seq = 0);

/// One scheduled sensor in the pipeline: owns its RNG and sequence counter.
class SensorInstance {
 public:
  SensorInstance(MeasurementKind kind, SensorConfig cfg, ModelParams params);

  double rate_hz() const { return cfg_.rate_hz; }
  double latency() const { return cfg_.latency; }
  MeasurementKind kind() const { return kind_; }

  /// Time the next sample is due.
  double next_due() const { return next_due_; }
  /// Samples the sensor at `stamp` and advances the schedule.
  Measurement sample(const Vec& x_true, const Vec2& u, double stamp);

 private:
  MeasurementKind kind_;
  SensorConfig cfg_;
  ModelParams params_;
  Rng rng_;
  std::uint64_t seq_ = 0;
  double next_due_ = 0;
};

}  // namespace crs
