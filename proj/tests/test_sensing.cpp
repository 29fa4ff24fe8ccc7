#include "crs/sensing.hpp"

#include <cmath>

#include "doctest.h"

using namespace crs;

TEST_CASE("pose measurement") {
  SensorConfig cfg;
  Rng rng(1);
  Vec x(6);
  x << 1.0, 2.0, 0.5, 1.0, 0.0, 0.0;
  SUBCASE("noiseless is exact") {
    Measurement m = measure_pose(x, cfg, rng);
    CHECK(m.values(0) == 1.0);
    CHECK(m.values(1) == 2.0);
    CHECK(m.values(2) == 0.5);
  }
  SUBCASE("heading reported wrapped") {
    Vec xw = x;
    xw(2) = 3.14159265358979323846 + 0.1;
    Measurement m = measure_pose(xw, cfg, rng);
    CHECK(m.values(2) == doctest::Approx(-3.14159265358979323846 + 0.1));
  }
  SUBCASE("empirical std within 2%") {
    SensorConfig noisy = cfg;
    noisy.noise_std = Vec(3);
    noisy.noise_std << 0.05, 0.05, 0.01;
    const int n = 100000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
      const double e = measure_pose(x, noisy, rng).values(0) - 1.0;
      sum += e;
      sum2 += e * e;
    }
    const double std_hat = std::sqrt(sum2 / n - (sum / n) * (sum / n));
    CHECK(std_hat == doctest::Approx(0.05).epsilon(0.02));
  }
}

TEST_CASE("imu measurement") {
  ModelParams p;
  SensorConfig cfg;
  Rng rng(2);
  SUBCASE("straight coasting gives zero lateral channels") {
    Vec x(6);
    x << 0, 0, 0, 1.5, 0, 0;
    Measurement m = measure_imu(x, Vec2(0, 0), p, cfg, rng);
    CHECK(m.values(1) == doctest::Approx(0.0));
    CHECK(m.values(2) == doctest::Approx(0.0));
  }
  SUBCASE("channels equal the dynamic derivative components") {
    Vec x(6);
    x << 0.3, -0.2, 0.4, 1.2, 0.1, 0.8;
    const Vec2 u(0.1, 0.4);
    Measurement m = measure_imu(x, u, p, cfg, rng);
    const Vec dx = dynamic_derivative(DynamicState::from(x), ControlInput::from(u), p);
    CHECK(m.values(0) == dx(3));
    CHECK(m.values(1) == dx(4));
    CHECK(m.values(2) == x(5));
  }
  SUBCASE("kinematic state rejected") {
    Vec x4(4);
    x4 << 0, 0, 0, 1.0;
    CHECK_THROWS_AS(measure_imu(x4, Vec2(0, 0), p, cfg, rng), std::invalid_argument);
  }
  SUBCASE("sample mean converges to noiseless value") {
    SensorConfig noisy = cfg;
    noisy.noise_std = Vec(3);
    noisy.noise_std << 0.1, 0.1, 0.01;
    Vec x(6);
    x << 0, 0, 0, 1.2, 0.1, 0.8;
    const Vec2 u(0.1, 0.4);
    const Vec truth = measure_imu(x, u, p, cfg, rng).values;
    Vec mean = Vec::Zero(3);
    const int n = 100000;
    for (int i = 0; i < n; ++i) mean += measure_imu(x, u, p, noisy, rng).values;
    mean /= n;
    for (int i = 0; i < 3; ++i)
      CHECK(mean(i) == doctest::Approx(truth(i)).epsilon(0.02).scale(0.01));
  }
}

TEST_CASE("full state measurement") {
  SensorConfig cfg;
  Rng rng(3);
  Vec x4(4), x6(6);
  x4 << 1, 2, 3, 4;
  x6 << 1, 2, 3, 4, 5, 6;
  CHECK(measure_full_state(x4, cfg, rng).values.size() == 4);
  CHECK(measure_full_state(x6, cfg, rng).values.size() == 6);
  CHECK(measure_full_state(x6, cfg, rng).values == x6);
}

TEST_CASE("seeded sensor streams reproduce bit-exactly") {
  ModelParams p;
  SensorConfig cfg;
  cfg.noise_std = Vec(3);
  cfg.noise_std << 0.01, 0.01, 0.001;
  cfg.seed = 77;
  Vec x(6);
  x << 0, 0, 0, 1.0, 0, 0;
  SensorInstance a(MeasurementKind::Pose, cfg, p);
  SensorInstance b(MeasurementKind::Pose, cfg, p);
  for (int k = 0; k < 100; ++k) {
    Measurement ma = a.sample(x, Vec2(0, 0), k * 0.01);
    Measurement mb = b.sample(x, Vec2(0, 0), k * 0.01);
    CHECK(ma.values == mb.values);
    CHECK(ma.seq == static_cast<std::uint64_t>(k));
  }
}

TEST_CASE("sensor config validation") {
  SensorConfig cfg;
  cfg.rate_hz = 0;
  CHECK_THROWS_AS(cfg.validate(), ParseError);
  cfg.rate_hz = 100;
  cfg.latency = -1;
  CHECK_THROWS_AS(cfg.validate(), ParseError);
}
