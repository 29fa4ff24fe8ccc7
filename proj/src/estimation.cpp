#include "crs/estimation.hpp"

#include <cmath>

namespace crs {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

ButterworthFilter::ButterworthFilter(double cutoff_hz, double rate_hz, int channels)
    : cutoff_hz_(cutoff_hz), rate_hz_(rate_hz) {
  if (!(cutoff_hz > 0) || !(cutoff_hz < rate_hz / 2))
    throw ParseError("butterworth: cutoff must be in (0, rate/2)");
  // prewarped analog cutoff; K = 2 fs
  const double K = 2.0 * rate_hz;
  const double wa = K * std::tan(kPi * cutoff_hz / rate_hz);

  // first-order section wa / (s + wa)
  const double d1 = K + wa;
  fb0_ = wa / d1;
  fb1_ = wa / d1;
  fa1_ = (wa - K) / d1;

  // biquad wa^2 / (s^2 + wa s + wa^2)
  const double d0 = K * K + wa * K + wa * wa;
  sb0_ = wa * wa / d0;
  sb1_ = 2.0 * wa * wa / d0;
  sb2_ = wa * wa / d0;
  sa1_ = (-2.0 * K * K + 2.0 * wa * wa) / d0;
  sa2_ = (K * K - wa * K + wa * wa) / d0;

  st_ = Mat::Zero(channels, 6);
}

void ButterworthFilter::reset() { st_.setZero(); }

void ButterworthFilter::prime(const Vec& value) {
  for (int c = 0; c < st_.rows(); ++c) {
    const double v = c < value.size() ? value(c) : 0.0;
    st_(c, 0) = v;  // first-order x1
    st_(c, 1) = v;  // first-order y1
    st_(c, 2) = v;  // biquad x1
    st_(c, 3) = v;  // biquad x2
    st_(c, 4) = v;  // biquad y1
    st_(c, 5) = v;  // biquad y2
  }
}

Vec ButterworthFilter::step(const Vec& in) {
  Vec out(st_.rows());
  for (int c = 0; c < st_.rows(); ++c) {
    const double x = c < in.size() ? in(c) : 0.0;
    double y1 = fb0_ * x + fb1_ * st_(c, 0) - fa1_ * st_(c, 1);
    st_(c, 0) = x;
    st_(c, 1) = y1;
    double y2 = sb0_ * y1 + sb1_ * st_(c, 2) + sb2_ * st_(c, 3) - sa1_ * st_(c, 4) -
                sa2_ * st_(c, 5);
    st_(c, 3) = st_(c, 2);
    st_(c, 2) = y1;
    st_(c, 5) = st_(c, 4);
    st_(c, 4) = y2;
    out(c) = y2;
  }
  return out;
}

std::complex<double> ButterworthFilter::response(double f) const {
  const std::complex<double> z = std::exp(std::complex<double>(0.0, 2.0 * kPi * f / rate_hz_));
  const std::complex<double> zi = 1.0 / z;
  const std::complex<double> h1 = (fb0_ + fb1_ * zi) / (1.0 + fa1_ * zi);
  const std::complex<double> h2 =
      (sb0_ + sb1_ * zi + sb2_ * zi * zi) / (1.0 + sa1_ * zi + sa2_ * zi * zi);
  return h1 * h2;
}

ButterworthFilter butterworth_design(double cutoff_hz, double rate_hz, int channels) {
  return ButterworthFilter(cutoff_hz, rate_hz, channels);
}

Vec Estimate::as_dynamic() const {
  if (layout == ModelType::Dynamic) return x;
  Vec d(6);
  d << x(0), x(1), x(2), x(3), 0.0, 0.0;
  return d;
}

VelocityEstimator::VelocityEstimator(double rate_hz, double cutoff_hz)
    : rate_hz_(rate_hz), filter_(cutoff_hz, rate_hz, 4) {}

void VelocityEstimator::reset() {
  filter_.reset();
  has_prev_ = false;
  psi_unwrapped_ = 0;
}

Estimate VelocityEstimator::step(const Measurement& pose) {
  if (pose.kind != MeasurementKind::Pose)
    throw std::invalid_argument("velocity estimator: expects pose measurements");
  Estimate est;
  est.stamp = pose.stamp;
  est.source = EstimateSource::VelocityEstimator;
  est.layout = ModelType::Dynamic;

  if (!has_prev_) {
    has_prev_ = true;
    prev_pose_ = pose.values;
    prev_stamp_ = pose.stamp;
    psi_unwrapped_ = pose.values(2);
    Vec prime(4);
    prime << 0, 0, 0, psi_unwrapped_;
    filter_.prime(prime);
    est.x = Vec(6);
    est.x << pose.values(0), pose.values(1), pose.values(2), 0, 0, 0;
    return est;
  }
  if (!(pose.stamp > prev_stamp_))
    throw std::invalid_argument("velocity estimator: non-monotone measurement stamps");

  const double T_s = pose.stamp - prev_stamp_;
  const double dpsi = wrap_angle(pose.values(2) - prev_pose_(2));
  psi_unwrapped_ += dpsi;

  Vec raw(4);
  raw << (pose.values(0) - prev_pose_(0)) / T_s, (pose.values(1) - prev_pose_(1)) / T_s,
      dpsi / T_s, psi_unwrapped_;
  const Vec f = filter_.step(raw);

  const double psi_hat = f(3);
  const double c = std::cos(psi_hat), s = std::sin(psi_hat);
  const double v_x = f(0) * c + f(1) * s;
  const double v_y = f(1) * c - f(0) * s;

  prev_pose_ = pose.values;
  prev_stamp_ = pose.stamp;

  est.x = Vec(6);
  est.x << pose.values(0), pose.values(1), pose.values(2), v_x, v_y, f(2);
  return est;
}

EkfConfig EkfConfig::defaults(ModelType model, const ModelParams& params) {
  EkfConfig cfg;
  cfg.model = model;
  cfg.params = params;
  const int n = model == ModelType::Kinematic ? 4 : 6;
  Vec q(n);
  if (model == ModelType::Kinematic)
    q << 1e-5, 1e-5, 1e-4, 5e-3;
  else
    q << 1e-5, 1e-5, 1e-4, 5e-3, 5e-3, 0.1;
  cfg.Q = q.asDiagonal();
  Vec rp(3);
  rp << 1e-6, 1e-6, 4e-6;
  cfg.R_pose = rp.asDiagonal();
  Vec ri(3);
  ri << 1e-2, 1e-2, 1e-4;
  cfg.R_imu = ri.asDiagonal();
  return cfg;
}

Ekf::Ekf(EkfConfig cfg, const Vec& x0, const Mat& P0, double stamp0)
    : cfg_(std::move(cfg)), model_(cfg_.model, cfg_.params), x_(x0), P_(P0), stamp_(stamp0) {
  if (x_.size() != model_.nx()) throw std::invalid_argument("ekf: x0 dimension mismatch");
}

void Ekf::predict(const Vec2& u, double dt) {
  if (dt < 0) throw std::invalid_argument("ekf: negative prediction interval");
  if (dt == 0) return;
  Mat A, B;
  model_.step_jacobians(x_, u, dt, A, B);
  x_ = model_.step_rk4(x_, u, dt);
  // Q is a per-second intensity so prediction is rate-independent
  P_ = A * P_ * A.transpose() + cfg_.Q * dt;
  P_ = 0.5 * (P_ + P_.transpose()).eval();
  stamp_ += dt;
}

void Ekf::update(const Measurement& z, const Vec2& u) {
  const int n = model_.nx();
  Vec h;
  Mat H;
  const Mat* R = nullptr;
  if (z.kind == MeasurementKind::Pose) {
    h = x_.head(3);
    H = Mat::Zero(3, n);
    H.block(0, 0, 3, 3).setIdentity();
    R = &cfg_.R_pose;
  } else if (z.kind == MeasurementKind::Imu) {
    if (cfg_.model != ModelType::Dynamic)
      throw std::invalid_argument("ekf: IMU updates require the dynamic model");
    const Vec dx = model_.deriv(x_, u);
    h = Vec(3);
    h << dx(3), dx(4), x_(5);
    Mat fx, fu;
    model_.deriv_jac(x_, u, fx, fu);
    H = Mat::Zero(3, n);
    H.row(0) = fx.row(3);
    H.row(1) = fx.row(4);
    H(2, 5) = 1.0;
    R = &cfg_.R_imu;
  } else {
    h = x_;
    H = Mat::Identity(n, n);
    R = &cfg_.R_pose;  // unused in practice; full-state runs bypass the EKF
    if (R->rows() != n) {
      static thread_local Mat eye;
      eye = Mat::Identity(n, n) * 1e-6;
      R = &eye;
    }
  }

  Vec innov = z.values - h;
  if (z.kind == MeasurementKind::Pose) innov(2) = wrap_angle(innov(2));

  const Mat S = H * P_ * H.transpose() + *R;
  Eigen::FullPivLU<Mat> lu(S);
  if (!lu.isInvertible() || lu.rcond() < 1e-14)
    throw std::runtime_error("ekf: innovation covariance numerically singular (rcond=" +
                             format_double(lu.rcond()) + ")");
  const Mat K = P_ * H.transpose() * lu.inverse();
  x_ += K * innov;
  const Mat IKH = Mat::Identity(n, n) - K * H;
  P_ = IKH * P_ * IKH.transpose() + K * (*R) * K.transpose();
  P_ = 0.5 * (P_ + P_.transpose()).eval();
}

void Ekf::process(const Measurement& z, const Vec2& u) {
  if (z.stamp < stamp_) {
    ++dropped_;
    return;
  }
  predict(u, z.stamp - stamp_);
  update(z, u);
}

Estimate Ekf::estimate() const {
  Estimate e;
  e.x = x_;
  e.stamp = stamp_;
  e.source = EstimateSource::Ekf;
  e.layout = cfg_.model;
  return e;
}

}  // namespace crs
