#include "crs/estimation.hpp"

#include <cmath>
#include <random>

#include "doctest.h"

using namespace crs;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

TEST_CASE("butterworth contract") {
  ButterworthFilter f = butterworth_design(5.0, 100.0);
  SUBCASE("dc gain") { CHECK(std::abs(f.response(0.0)) == doctest::Approx(1.0).epsilon(1e-9)); }
  SUBCASE("half-power at cutoff") {
    CHECK(std::abs(f.response(5.0)) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-3));
  }
  SUBCASE("-60 dB per decade asymptote") {
    const double mag1 = std::abs(f.response(10.0));
    const double mag2 = std::abs(f.response(40.0));  // one decade above cutoff is near Nyquist
    const double db_per_decade =
        20.0 * std::log10(mag2 / mag1) / std::log10(40.0 / 10.0);
    CHECK(db_per_decade < -55.0);  // bilinear warping steepens toward Nyquist
  }
  SUBCASE("time-domain dc convergence") {
    Vec one(1);
    one << 1.0;
    Vec y(1);
    for (int k = 0; k < 500; ++k) y = f.step(one);
    CHECK(y(0) == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("cutoff at or above nyquist rejected") {
    CHECK_THROWS_AS(butterworth_design(50.0, 100.0), ParseError);
    CHECK_THROWS_AS(butterworth_design(60.0, 100.0), ParseError);
  }
}

TEST_CASE("butterworth sine attenuation matches transfer function") {
  ButterworthFilter f = butterworth_design(5.0, 100.0);
  const double freq = 20.0;
  const double expected = std::abs(f.response(freq));
  double peak = 0;
  Vec in(1), out(1);
  for (int k = 0; k < 600; ++k) {
    in(0) = std::sin(2 * kPi * freq * k / 100.0);
    out = f.step(in);
    if (k > 300) peak = std::max(peak, std::abs(out(0)));
  }
  CHECK(peak == doctest::Approx(expected).epsilon(0.02));
}

TEST_CASE("velocity estimator") {
  SUBCASE("stationary stream goes to zero") {
    VelocityEstimator ve(100.0);
    Estimate e;
    for (int k = 0; k < 300; ++k) {
      Measurement m{MeasurementKind::Pose, (Vec(3) << 1.0, 2.0, 0.5).finished(), k * 0.01, 0u};
      e = ve.step(m);
    }
    CHECK(std::abs(e.x(3)) < 1e-12);
    CHECK(std::abs(e.x(4)) < 1e-12);
    CHECK(std::abs(e.x(5)) < 1e-12);
  }
  SUBCASE("constant velocity straight motion") {
    VelocityEstimator ve(100.0);
    const double v = 1.4;
    Estimate e;
    for (int k = 0; k < 500; ++k) {
      Measurement m{MeasurementKind::Pose, (Vec(3) << v * k * 0.01, 0.0, 0.0).finished(),
                    k * 0.01, 0u};
      e = ve.step(m);
    }
    CHECK(e.x(3) == doctest::Approx(v).epsilon(1e-6));
    CHECK(std::abs(e.x(4)) < 1e-6);
  }
  SUBCASE("circular motion gives consistent body frame") {
    VelocityEstimator ve(100.0);
    const double R = 1.0, v = 1.0;
    const double om = v / R;
    Estimate e;
    for (int k = 0; k < 1500; ++k) {
      const double t = k * 0.01;
      Vec z(3);
      z << R * std::cos(om * t), R * std::sin(om * t), wrap_angle(om * t + kPi / 2);
      e = ve.step({MeasurementKind::Pose, z, t, 0u});
    }
    // backward differences estimate velocity half a sample late, so the
    // residual body-frame error is about v * om * T_s / 2
    const double half_sample = v * om * 0.01 / 2 + 1e-3;
    CHECK(e.x(3) == doctest::Approx(v).epsilon(1e-3));
    CHECK(std::abs(e.x(4)) < 2 * half_sample);
    CHECK(e.x(5) == doctest::Approx(om).epsilon(1e-3));
  }
  SUBCASE("non-monotone stamps rejected") {
    VelocityEstimator ve(100.0);
    ve.step({MeasurementKind::Pose, Vec::Zero(3), 0.0, 0u});
    ve.step({MeasurementKind::Pose, Vec::Zero(3) + Vec::Constant(3, 0.01), 0.01, 1u});
    CHECK_THROWS_AS(ve.step({MeasurementKind::Pose, Vec::Zero(3), 0.005, 2u}),
                    std::invalid_argument);
  }
  SUBCASE("causal: output depends only on past poses") {
    // two streams identical up to k=200, diverging after: outputs at k<=200 equal
    VelocityEstimator a(100.0), b(100.0);
    Estimate ea, eb;
    for (int k = 0; k <= 200; ++k) {
      Vec z(3);
      z << 0.02 * k, 0.0, 0.0;
      ea = a.step({MeasurementKind::Pose, z, k * 0.01, 0u});
      eb = b.step({MeasurementKind::Pose, z, k * 0.01, 0u});
    }
    CHECK(ea.x == eb.x);
  }
}

TEST_CASE("ekf basics") {
  ModelParams p;
  EkfConfig cfg = EkfConfig::defaults(ModelType::Dynamic, p);

  SUBCASE("noiseless rollout tracked exactly with Q=0") {
    cfg.Q = Mat::Zero(6, 6);
    Vec x0(6);
    x0 << 0, 0, 0, 1.0, 0, 0;
    Ekf ekf(cfg, x0, Mat::Identity(6, 6) * 1e-4, 0.0);
    VehicleModel model(ModelType::Dynamic, p);
    Vec x = x0;
    const Vec2 u(0.05, 0.3);
    for (int k = 0; k < 200; ++k) {
      x = model.step_rk4(x, u, 0.01);
      ekf.predict(u, 0.01);
    }
    CHECK((ekf.state() - x).norm() < 1e-12);
  }

  SUBCASE("covariance inflates under process noise") {
    Vec x0(6);
    x0 << 0, 0, 0, 1.0, 0, 0;
    Ekf ekf(cfg, x0, Mat::Identity(6, 6) * 1e-6, 0.0);
    const double tr0 = ekf.covariance().trace();
    ekf.predict(Vec2(0, 0), 0.01);
    CHECK(ekf.covariance().trace() > tr0);
  }

  SUBCASE("dt=0 prediction is identity") {
    Vec x0(6);
    x0 << 0, 0, 0, 1.0, 0, 0;
    Ekf ekf(cfg, x0, Mat::Identity(6, 6) * 1e-4, 0.0);
    const Vec before = ekf.state();
    const Mat Pb = ekf.covariance();
    ekf.predict(Vec2(0.1, 0.5), 0.0);
    CHECK(ekf.state() == before);
    CHECK(ekf.covariance() == Pb);
  }

  SUBCASE("zero innovation leaves mean, shrinks covariance") {
    Vec x0(6);
    x0 << 0.5, -0.2, 0.3, 1.0, 0.05, 0.2;
    Ekf ekf(cfg, x0, Mat::Identity(6, 6) * 1e-2, 0.0);
    Measurement z{MeasurementKind::Pose, x0.head(3), 0.0, 0u};
    const Mat Pb = ekf.covariance();
    ekf.update(z, Vec2(0, 0));
    CHECK((ekf.state() - x0).norm() < 1e-12);
    // Loewner order: Pb - P is PSD
    Eigen::SelfAdjointEigenSolver<Mat> es(Pb - ekf.covariance());
    CHECK(es.eigenvalues().minCoeff() > -1e-12);
  }

  SUBCASE("huge R makes update a near-identity") {
    cfg.R_pose = Mat::Identity(3, 3) * 1e12;
    Vec x0(6);
    x0 << 0.5, -0.2, 0.3, 1.0, 0.05, 0.2;
    Ekf ekf(cfg, x0, Mat::Identity(6, 6) * 1e-2, 0.0);
    Vec z = x0.head(3);
    z(0) += 0.3;
    ekf.update({MeasurementKind::Pose, z, 0.0, 0u}, Vec2(0, 0));
    CHECK((ekf.state() - x0).norm() < 1e-10);
  }

  SUBCASE("imu update requires dynamic model") {
    EkfConfig kcfg = EkfConfig::defaults(ModelType::Kinematic, p);
    Vec x0(4);
    x0 << 0, 0, 0, 1.0;
    Ekf ekf(kcfg, x0, Mat::Identity(4, 4) * 1e-2, 0.0);
    Measurement z{MeasurementKind::Imu, Vec::Zero(3), 0.0, 0u};
    CHECK_THROWS_AS(ekf.update(z, Vec2(0, 0)), std::invalid_argument);
  }

  SUBCASE("stale measurements dropped") {
    Vec x0(6);
    x0 << 0, 0, 0, 1.0, 0, 0;
    Ekf ekf(cfg, x0, Mat::Identity(6, 6) * 1e-4, 1.0);
    ekf.process({MeasurementKind::Pose, x0.head(3), 0.5, 0u}, Vec2(0, 0));
    CHECK(ekf.dropped() == 1);
  }
}

TEST_CASE("ekf equals a textbook linear KF on straight kinematic motion") {
  ModelParams p;
  EkfConfig cfg = EkfConfig::defaults(ModelType::Kinematic, p);
  const double dt = 0.01;
  // estimate starts with the wrong speed; measurements are noiseless so the
  // estimate stays exactly on the psi = 0 manifold where the model is linear
  Vec x0(4);
  x0 << 0, 0, 0, 1.0;
  Mat P0 = Mat::Identity(4, 4) * 1e-2;
  Ekf ekf(cfg, x0, P0, 0.0);

  // independent textbook KF: x+ = A x, A from the exact linear system at psi=0, delta=0
  Mat A = Mat::Identity(4, 4);
  A(0, 3) = dt;
  Mat H = Mat::Zero(3, 4);
  H.block(0, 0, 3, 3).setIdentity();
  Vec xk = x0;
  Mat Pk = P0;

  Vec x_true = x0;
  x_true(3) = 1.3;
  for (int k = 1; k <= 200; ++k) {
    x_true(0) += x_true(3) * dt;
    Vec z(3);
    z << x_true(0), 0.0, 0.0;

    ekf.process({MeasurementKind::Pose, z, k * dt, 0u}, Vec2(0, 0));

    xk = A * xk;
    Pk = A * Pk * A.transpose() + cfg.Q * dt;
    Mat S = H * Pk * H.transpose() + cfg.R_pose;
    Mat K = Pk * H.transpose() * S.inverse();
    xk += K * (z - H * xk);
    Mat IKH = Mat::Identity(4, 4) - K * H;
    Pk = IKH * Pk * IKH.transpose() + K * cfg.R_pose * K.transpose();

    CHECK((ekf.state() - xk).norm() < 1e-10);
  }
}

TEST_CASE("covariance stays symmetric PSD under random predict/update") {
  ModelParams p;
  EkfConfig cfg = EkfConfig::defaults(ModelType::Dynamic, p);
  Vec x0(6);
  x0 << 0, 0, 0, 1.0, 0, 0;
  Ekf ekf(cfg, x0, Mat::Identity(6, 6) * 1e-2, 0.0);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> N(0.0, 0.01);
  VehicleModel model(ModelType::Dynamic, p);
  Vec x = x0;
  for (int k = 1; k <= 300; ++k) {
    const Vec2 u(0.1 * std::sin(k * 0.05), 0.3);
    x = model.step_rk4(x, u, 0.01);
    Vec z = x.head(3);
    z(0) += N(rng);
    z(1) += N(rng);
    z(2) += N(rng);
    ekf.process({MeasurementKind::Pose, z, k * 0.01, 0u}, u);
    const Mat& P = ekf.covariance();
    CHECK((P - P.transpose()).norm() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat> es(P);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("ekf velocity beats finite-difference estimator on noisy straight run") {
  ModelParams p;
  const double dt = 0.01;
  std::mt19937_64 rng(12);
  std::normal_distribution<double> N(0.0, 1.0);
  const double pos_std = 0.002, psi_std = 0.004;

  EkfConfig cfg = EkfConfig::defaults(ModelType::Dynamic, p);
  cfg.R_pose = (Vec(3) << pos_std * pos_std, pos_std * pos_std, psi_std * psi_std)
                   .finished()
                   .asDiagonal();
  VehicleModel plant(ModelType::Dynamic, p);
  Vec x(6);
  x << 0, 0, 0, 1.0, 0, 0;
  const Vec2 u(0.0, 0.6);  // accelerating straight-line run
  Ekf ekf(cfg, x, Mat::Identity(6, 6) * 1e-3, 0.0);
  VelocityEstimator ve(1.0 / dt);

  double se_ekf = 0, se_ve = 0;
  int count = 0;
  for (int k = 0; k <= 800; ++k) {
    const double t = k * dt;
    Vec z(3);
    z << x(0) + pos_std * N(rng), x(1) + pos_std * N(rng), wrap_angle(x(2) + psi_std * N(rng));
    Measurement m{MeasurementKind::Pose, z, t, static_cast<std::uint64_t>(k)};
    Estimate eve = ve.step(m);
    if (k > 0) ekf.process(m, u);
    if (t > 1.0) {  // settling time
      se_ekf += std::pow(ekf.state()(3) - x(3), 2);
      se_ve += std::pow(eve.x(3) - x(3), 2);
      ++count;
    }
    x = plant.step_rk4(x, u, dt);
  }
  CHECK(std::sqrt(se_ekf / count) <= std::sqrt(se_ve / count));
}
