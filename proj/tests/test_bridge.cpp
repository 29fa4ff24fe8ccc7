#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <chrono>
#include <random>
#include <thread>

#include "crs/bridge.hpp"
#include "doctest.h"

using namespace crs;

namespace {

CommandMsg sample_command() { return {7, 123456, 0.12f, -0.5f}; }

TelemetryMsg sample_telemetry() {
  TelemetryMsg t;
  t.seq = 42;
  t.stamp_us = 987654321;
  t.pose[0] = 1.5f;
  t.pose[1] = -0.25f;
  t.pose[2] = 3.0f;
  t.motion[0] = 1.1f;
  t.motion[1] = -0.02f;
  t.motion[2] = 4.5f;
  t.battery_v = 7.4f;
  t.flags = 0x01;
  return t;
}

}  // namespace

TEST_CASE("frame sizes are fixed per type") {
  CHECK(encode_frame(HeartbeatMsg{1, 2}).size() == 20);
  CHECK(encode_frame(sample_command()).size() == 28);
  CHECK(encode_frame(sample_telemetry()).size() == 49);
}

TEST_CASE("codec round-trips every message type") {
  SUBCASE("command") {
    const CommandMsg in = sample_command();
    const DecodeResult r = decode_frame(encode_frame(in));
    REQUIRE(r.status == DecodeStatus::Ok);
    const auto& out = std::get<CommandMsg>(r.msg);
    CHECK(out.seq == in.seq);
    CHECK(out.stamp_us == in.stamp_us);
    CHECK(out.delta == in.delta);
    CHECK(out.a == in.a);
  }
  SUBCASE("telemetry") {
    const TelemetryMsg in = sample_telemetry();
    const std::vector<std::uint8_t> bytes = encode_frame(in);
    const DecodeResult r = decode_frame(bytes);
    REQUIRE(r.status == DecodeStatus::Ok);
    const auto& out = std::get<TelemetryMsg>(r.msg);
    CHECK(out.seq == in.seq);
    CHECK(out.stamp_us == in.stamp_us);
    for (int i = 0; i < 3; ++i) {
      CHECK(out.pose[i] == in.pose[i]);
      CHECK(out.motion[i] == in.motion[i]);
    }
    CHECK(out.battery_v == in.battery_v);
    CHECK(out.flags == in.flags);
    // re-encoding the decoded message reproduces the original bytes
    CHECK(encode_frame(out) == bytes);
  }
  SUBCASE("heartbeat") {
    const DecodeResult r = decode_frame(encode_frame(HeartbeatMsg{9, 77}));
    REQUIRE(r.status == DecodeStatus::Ok);
    const auto& out = std::get<HeartbeatMsg>(r.msg);
    CHECK(out.seq == 9);
    CHECK(out.stamp_us == 77);
  }
}

TEST_CASE("decoder maps each corruption to its own error") {
  std::vector<std::uint8_t> good = encode_frame(sample_command());

  SUBCASE("too short") {
    CHECK(decode_frame(good.data(), 3).status == DecodeStatus::TooShort);
    CHECK(decode_frame(good.data(), 19).status == DecodeStatus::TooShort);
  }
  SUBCASE("bad magic") {
    good[0] ^= 0xFF;
    CHECK(decode_frame(good).status == DecodeStatus::BadMagic);
  }
  SUBCASE("bad version") {
    good[2] = 0x02;
    CHECK(decode_frame(good).status == DecodeStatus::BadVersion);
  }
  SUBCASE("bad type") {
    good[3] = 0x07;
    CHECK(decode_frame(good).status == DecodeStatus::BadType);
  }
  SUBCASE("bad length") {
    CHECK(decode_frame(good.data(), good.size() - 1).status == DecodeStatus::BadLength);
    std::vector<std::uint8_t> huge(600, 0x00);
    CHECK(decode_frame(huge).status == DecodeStatus::BadLength);
  }
  SUBCASE("bad crc") {
    good[20] ^= 0x01;  // payload byte, header still intact
    CHECK(decode_frame(good).status == DecodeStatus::BadCrc);
  }
  SUBCASE("bad payload") {
    CommandMsg c = sample_command();
    c.a = 1.5f;
    CHECK(decode_frame(encode_frame(c)).status == DecodeStatus::BadPayload);
    c.a = std::numeric_limits<float>::quiet_NaN();
    CHECK(decode_frame(encode_frame(c)).status == DecodeStatus::BadPayload);
  }
}

TEST_CASE("any single-bit flip is rejected") {
  const std::vector<std::uint8_t> good = encode_frame(sample_telemetry());
  for (std::size_t byte = 0; byte < good.size(); ++byte) {
    for (int bit = 0; bit < 8; ++bit) {
      std::vector<std::uint8_t> bad = good;
      bad[byte] ^= static_cast<std::uint8_t>(1u << bit);
      CHECK(decode_frame(bad).status != DecodeStatus::Ok);
    }
  }
}

TEST_CASE("fuzzed mutations never crash or falsely accept") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> byte_d(0, 255);
  const std::vector<std::vector<std::uint8_t>> seeds = {
      encode_frame(sample_command()), encode_frame(sample_telemetry()),
      encode_frame(HeartbeatMsg{3, 99})};
  int accepts = 0;
  for (int i = 0; i < 50000; ++i) {
    std::vector<std::uint8_t> buf = seeds[rng() % seeds.size()];
    switch (rng() % 4) {
      case 0:  // bit flip
        buf[rng() % buf.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
        break;
      case 1:  // truncation
        buf.resize(rng() % buf.size());
        break;
      case 2:  // extension with garbage
        buf.push_back(static_cast<std::uint8_t>(byte_d(rng)));
        break;
      default:  // random garbage of random length
        buf.assign(rng() % 80, 0);
        for (auto& b : buf) b = static_cast<std::uint8_t>(byte_d(rng));
        break;
    }
    bool is_seed = false;
    for (const auto& s : seeds) is_seed = is_seed || buf == s;
    if (is_seed) continue;
    if (decode_frame(buf).status == DecodeStatus::Ok) ++accepts;
  }
  CHECK(accepts == 0);
}

TEST_CASE("sequence tracker drops stale and duplicate frames") {
  SeqTracker t;
  CHECK(t.accept(10));
  CHECK_FALSE(t.accept(10));
  CHECK_FALSE(t.accept(9));
  CHECK(t.accept(11));
  SUBCASE("wraparound stays fresh inside the half-window") {
    SeqTracker w;
    CHECK(w.accept(0xFFFFFFF0u));
    CHECK(w.accept(5));  // 21 ahead across the wrap
    CHECK_FALSE(w.accept(0xFFFFFFF0u));
  }
  SUBCASE("a jump of half the space is stale") {
    SeqTracker w;
    CHECK(w.accept(1));
    CHECK_FALSE(w.accept(1 + (1u << 31)));
    CHECK(w.accept(1 + (1u << 31) - 1));
  }
  t.reset();
  CHECK(t.accept(1));
}

TEST_CASE("endpoint parsing") {
  const Endpoint ep = Endpoint::parse("127.0.0.1:9000");
  CHECK(ep.host == "127.0.0.1");
  CHECK(ep.port == 9000);
  CHECK(ep.str() == "127.0.0.1:9000");
  CHECK_THROWS_AS(Endpoint::parse("no-port"), std::invalid_argument);
  CHECK_THROWS_AS(Endpoint::parse("host:"), std::invalid_argument);
  CHECK_THROWS_AS(Endpoint::parse("host:70000"), std::invalid_argument);
}

TEST_CASE("loopback bridged run matches the in-process simulation") {
  // ffpid: the path-pid limit cycle amplifies the float32 wire quantization
  PipelineConfig cfg;
  cfg.track_file = "tracks/icra_oval";
  cfg.controller = ControllerKind::FfPid;
  cfg.estimator = EstimatorKind::FullState;
  cfg.duration_s = 2.0;

  const EpisodeLog local = run_episode(cfg);
  REQUIRE(!local.aborted);

  PlantServerConfig sc;
  sc.model = cfg.plant_model;
  sc.dt = cfg.plant_dt;
  sc.x0 = local.rows.front().x_true;
  PlantServer server(Endpoint{"127.0.0.1", 0}, sc);
  server.start();
  BridgePlant plant(Endpoint{"127.0.0.1", server.port()});
  const EpisodeLog remote = run_episode(cfg, plant);
  server.stop();

  REQUIRE(!remote.aborted);
  REQUIRE(remote.rows.size() == local.rows.size());
  // float32 quantization on the wire bounds the divergence
  for (std::size_t i = 0; i < local.rows.size(); ++i) {
    const Vec d = remote.rows[i].x_true - local.rows[i].x_true;
    CHECK(d.head(2).norm() < 5e-3);
  }
}

TEST_CASE("loop rides out 20 percent packet loss") {
  PipelineConfig cfg;
  cfg.track_file = "tracks/icra_oval";
  cfg.controller = ControllerKind::PathPid;
  cfg.estimator = EstimatorKind::FullState;
  cfg.path_pid_drive = 0.08;  // low speed, where the path pid is well damped
  cfg.duration_s = 1.5;

  PlantServerConfig sc;
  {
    const Track track = Track::load(cfg.track_file);
    const TrackRef r = track.ref_at(0.0);
    sc.x0 = Vec::Zero(6);
    sc.x0 << r.point.x(), r.point.y(), r.tangent_angle, cfg.start_v, 0, 0;
  }
  PlantServer server(Endpoint{"127.0.0.1", 0}, sc);
  server.start();
  BridgePlantConfig bc;
  bc.send_loss = 0.2;
  bc.recv_loss = 0.2;
  bc.loss_seed = 5;
  bc.reply_timeout = 0.02;
  BridgePlant plant(Endpoint{"127.0.0.1", server.port()}, bc);
  const EpisodeLog log = run_episode(cfg, plant);
  server.stop();

  CHECK(!log.aborted);
  REQUIRE(!log.rows.empty());
  CHECK(log.rows.back().x_true.allFinite());
  CHECK(std::abs(log.rows.back().e_lat) < 0.2);
}

TEST_CASE("command silence engages the safe stop flag") {
  PlantServerConfig sc;
  sc.command_timeout = 0.15;
  PlantServer server(Endpoint{"127.0.0.1", 0}, sc);
  server.start();
  BridgePlant plant(Endpoint{"127.0.0.1", server.port()});  // syncs once, then silence

  bool engaged = false;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(2);
  while (!engaged && std::chrono::steady_clock::now() < deadline) {
    if (const auto flags = plant.poll_flags(0.1)) engaged = (*flags & 0x01) != 0;
  }
  server.stop();
  CHECK(engaged);
}
