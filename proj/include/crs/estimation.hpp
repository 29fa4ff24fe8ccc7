#pragma once

#include <complex>
#include <optional>

#include "crs/models.hpp"
#include "crs/sensing.hpp"

namespace crs {

/// Third-order Butterworth low-pass, bilinear transform with frequency
/// prewarping, split into a first-order section and a biquad. Unity DC gain.
class ButterworthFilter {
 public:
  ButterworthFilter(double cutoff_hz, double rate_hz, int channels);

  double cutoff_hz() const { return cutoff_hz_; }
  double rate_hz() const { return rate_hz_; }

  /// Filters one sample per channel.
  Vec step(const Vec& in);
  void reset();
  /// Seeds the filter state so a constant input `value` passes unchanged.
  void prime(const Vec& value);

  /// Complex transfer function at frequency f (Hz).
  std::complex<double> response(double f) const;

 private:
  double cutoff_hz_, rate_hz_;
  // first-order section: y = b0 x + b1 x1 - a1 y1
  double fb0_, fb1_, fa1_;
  // biquad: y = b0 x + b1 x1 + b2 x2 - a1 y1 - a2 y2
  double sb0_, sb1_, sb2_, sa1_, sa2_;
  Mat st_;  // channels x 6 internal state
};

ButterworthFilter butterworth_design(double cutoff_hz, double rate_hz, int channels = 1);

enum class EstimateSource { VelocityEstimator, Ekf, FullState };

/// Full state estimate. `x` uses the layout of `layout` (4- or 6-dim).
struct Estimate {
  Vec x;
  double stamp = 0;
  EstimateSource source = EstimateSource::FullState;
  ModelType layout = ModelType::Dynamic;

  /// Dynamic-layout view: kinematic estimates map to (v_x = v, v_y = 0,
  /// omega = 0); dynamic estimates pass through.
  Vec as_dynamic() const;
};

/// Finite-difference velocity estimator with Butterworth smoothing.
/// World-frame velocities and yaw rate by backward differences of the pose,
/// rotated into the body frame using the filtered heading.
class VelocityEstimator {
 public:
  VelocityEstimator(double rate_hz, double cutoff_hz = 5.0);

  Estimate step(const Measurement& pose);
  void reset();

 private:
  double rate_hz_;
  ButterworthFilter filter_;  // channels: v_x^w, v_y^w, omega, psi
  bool has_prev_ = false;
  Vec prev_pose_;
  double prev_stamp_ = 0;
  double psi_unwrapped_ = 0;
};

struct EkfConfig {
  ModelType model = ModelType::Dynamic;
  ModelParams params;
  Mat Q;       // process noise (model-dim)
  Mat R_pose;  // 3x3
  Mat R_imu;   // 3x3 (dynamic model only)
  static EkfConfig defaults(ModelType model, const ModelParams& params);
};

/// Extended Kalman filter over either bicycle model. Joseph-form updates,
/// heading innovation wrapped, asynchronous multi-rate measurements by
/// predicting to the measurement stamp. Out-of-order measurements are dropped.
class Ekf {
 public:
  Ekf(EkfConfig cfg, const Vec& x0, const Mat& P0, double stamp0 = 0);

  void predict(const Vec2& u, double dt);
  void update(const Measurement& z, const Vec2& u);
  /// predict to z.stamp with input u, then update; stale stamps dropped.
  void process(const Measurement& z, const Vec2& u);

  Estimate estimate() const;
  const Vec& state() const { return x_; }
  const Mat& covariance() const { return P_; }
  double stamp() const { return stamp_; }
  int dropped() const { return dropped_; }

 private:
  EkfConfig cfg_;
  VehicleModel model_;
  Vec x_;
  Mat P_;
  double stamp_;
  int dropped_ = 0;
};

}  // namespace crs
