#include "crs/sensing.hpp"

namespace crs {

void SensorConfig::validate() const {
  if (!(rate_hz > 0)) throw ParseError("sensor: rate_hz must be positive");
  if (latency < 0) throw ParseError("sensor: latency must be non-negative");
  for (int i = 0; i < noise_std.size(); ++i)
    if (noise_std(i) < 0) throw ParseError("sensor: noise_std must be non-negative");
}

namespace {
Vec add_noise(Vec v, const Vec& std_dev, Rng& rng) {
  if (std_dev.size() == 0) return v;
  std::normal_distribution<double> N(0.0, 1.0);
  for (int i = 0; i < v.size() && i < std_dev.size(); ++i) v(i) += std_dev(i) * N(rng);
  return v;
}
}  // namespace

Measurement measure_pose(const Vec& x_true, const SensorConfig& cfg, Rng& rng, double stamp,
                         std::uint64_t seq) {
  Vec z = add_noise(x_true.head(3), cfg.noise_std, rng);
  z(2) = wrap_angle(z(2));
  return {MeasurementKind::Pose, z, stamp, seq};
}

Measurement measure_imu(const Vec& x_true, const Vec2& u, const ModelParams& params,
                        const SensorConfig& cfg, Rng& rng, double stamp, std::uint64_t seq) {
  if (x_true.size() != 6)
    throw std::invalid_argument("measure_imu: requires a dynamic-model state");
  const Vec dx = dynamic_derivative(DynamicState::from(x_true), ControlInput::from(u), params);
  Vec z(3);
  z << dx(3), dx(4), x_true(5);
  return {MeasurementKind::Imu, add_noise(z, cfg.noise_std, rng), stamp, seq};
}

Measurement measure_full_state(const Vec& x_true, const SensorConfig& cfg, Rng& rng, double stamp,
                               std::uint64_t seq) {
  return {MeasurementKind::FullState, add_noise(x_true, cfg.noise_std, rng), stamp, seq};
}

SensorInstance::SensorInstance(MeasurementKind kind, SensorConfig cfg, ModelParams params)
    : kind_(kind), cfg_(std::move(cfg)), params_(std::move(params)), rng_(cfg_.seed) {
  cfg_.validate();
}

Measurement SensorInstance::sample(const Vec& x_true, const Vec2& u, double stamp) {
  Measurement m;
  switch (kind_) {
    case MeasurementKind::Pose:
      m = measure_pose(x_true, cfg_, rng_, stamp, seq_);
      break;
    case MeasurementKind::Imu:
      m = measure_imu(x_true, u, params_, cfg_, rng_, stamp, seq_);
      break;
    case MeasurementKind::FullState:
      m = measure_full_state(x_true, cfg_, rng_, stamp, seq_);
      break;
  }
  ++seq_;
  next_due_ = stamp + 1.0 / cfg_.rate_hz;
  return m;
}

}  // namespace crs
