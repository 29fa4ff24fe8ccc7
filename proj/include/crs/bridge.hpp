#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "crs/harness.hpp"

namespace crs {

/// Wire format (crs-wire-v1), all multi-byte fields little-endian:
///   offset 0   magic 0x43 0x52 ("CR")
///   offset 2   version 0x01
///   offset 3   msg_type (1 command, 2 telemetry, 3 heartbeat)
///   offset 4   seq, 4 bytes unsigned
///   offset 8   stamp_us, 8 bytes unsigned
///   offset 16  payload (fixed length per msg_type)
///   tail       crc32 over all preceding bytes, 4 bytes
enum class MsgType : std::uint8_t { Command = 0x01, Telemetry = 0x02, Heartbeat = 0x03 };

constexpr std::size_t kHeaderSize = 16;
constexpr std::size_t kCrcSize = 4;
constexpr std::size_t kHeartbeatFrameSize = kHeaderSize + kCrcSize;            // 20
constexpr std::size_t kCommandFrameSize = kHeaderSize + 8 + kCrcSize;          // 28
constexpr std::size_t kTelemetryFrameSize = kHeaderSize + 29 + kCrcSize;       // 49
constexpr std::size_t kMaxFrameSize = 512;

struct CommandMsg {
  std::uint32_t seq = 0;
  std::uint64_t stamp_us = 0;
  float delta = 0;  // steering [rad]
  float a = 0;      // normalized drive command, |a| <= 1
};

/// Motion triple carries body-frame (v_x, v_y, omega) so the bridged plant
/// reports a full state; a hardware build would fill it from its IMU/odometry.
struct TelemetryMsg {
  std::uint32_t seq = 0;
  std::uint64_t stamp_us = 0;
  float pose[3] = {0, 0, 0};    // x_p, y_p, psi
  float motion[3] = {0, 0, 0};  // v_x, v_y, omega
  float battery_v = 0;
  std::uint8_t flags = 0;  // bit 0: safe stop engaged
};

struct HeartbeatMsg {
  std::uint32_t seq = 0;
  std::uint64_t stamp_us = 0;
};

using BridgeMsg = std::variant<CommandMsg, TelemetryMsg, HeartbeatMsg>;

/// Every byte string decodes to exactly one of these.
enum class DecodeStatus {
  Ok,
  TooShort,    // shorter than the smallest frame
  BadMagic,
  BadVersion,
  BadType,
  BadLength,   // length does not match the fixed size for the type
  BadCrc,
  BadPayload,  // non-finite float or |a| > 1
};

std::string to_string(DecodeStatus s);

struct DecodeResult {
  DecodeStatus status = DecodeStatus::TooShort;
  BridgeMsg msg;
};

std::vector<std::uint8_t> encode_frame(const BridgeMsg& msg);
DecodeResult decode_frame(const std::uint8_t* data, std::size_t len);
DecodeResult decode_frame(const std::vector<std::uint8_t>& bytes);

/// Stale-frame rejection with a wraparound window of 2^31: a sequence
/// number is fresh when it is ahead of the last accepted one in serial
/// number arithmetic. The first frame is always fresh.
class SeqTracker {
 public:
  bool accept(std::uint32_t seq);
  void reset();

 private:
  bool has_last_ = false;
  std::uint32_t last_ = 0;
};

/// host:port pair; host may be a dotted quad or "localhost".
struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
  static Endpoint parse(const std::string& text);
  std::string str() const;
};

struct PlantServerConfig {
  ModelType model = ModelType::Dynamic;
  ModelParams params;
  double dt = 0.001;           // integration step [s]
  Vec x0;                      // model layout; empty = origin at rest
  double command_timeout = 0.2;  // wall-clock safe-stop timeout [s]
  double idle_telemetry_hz = 30.0;  // emission rate while no commands arrive
};

/// Remote plant loop: binds a UDP socket and advances the simulated vehicle
/// on command. A command stamped t_us means "hold this input until sim time
/// t_us"; commands at or behind the current sim time re-emit the latest
/// telemetry so a lost reply can be recovered by resending. With no commands
/// for command_timeout the safe stop engages (input zeroed, flags bit 0 set)
/// and telemetry keeps flowing at idle_telemetry_hz.
class PlantServer {
 public:
  /// Binds immediately; port 0 picks an ephemeral port. Throws on bind failure.
  PlantServer(const Endpoint& ep, PlantServerConfig cfg);
  ~PlantServer();

  PlantServer(const PlantServer&) = delete;
  PlantServer& operator=(const PlantServer&) = delete;

  std::uint16_t port() const { return port_; }
  /// Serves until stop() is called (from another thread or a signal handler).
  void run();
  void start();  // run() on an internal thread
  void stop();

  Vec state() const;  // current sim state, model layout (for tests)

 private:
  void serve_loop();

  PlantServerConfig cfg_;
  int sock_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::thread thread_;
  mutable std::mutex state_mu_;
  Vec x_;
  double sim_time_ = 0;
};

struct BridgePlantConfig {
  double reply_timeout = 0.05;  // resend a command after this long [s]
  int max_retries = 40;         // give up (plant unreachable) after this many
  // test-only loss injection, applied before the socket on both directions
  double send_loss = 0.0;
  double recv_loss = 0.0;
  std::uint64_t loss_seed = 0;
};

/// Harness-side plant over the UDP bridge. apply() sends one command per
/// controller tick and blocks until the matching telemetry arrives,
/// resending on timeout, so the closed loop is paced by the remote plant.
class BridgePlant : public Plant {
 public:
  BridgePlant(const Endpoint& server, BridgePlantConfig cfg = {});
  ~BridgePlant();

  BridgePlant(const BridgePlant&) = delete;
  BridgePlant& operator=(const BridgePlant&) = delete;

  Vec state() const override;
  void apply(const Vec2& u, double duration,
             const std::function<void(double, const Vec&)>& on_substep) override;

  std::uint8_t last_flags() const { return flags_; }

  /// Drains one telemetry datagram if one arrives within the timeout and
  /// returns its flags; observes idle emissions such as the safe-stop bit.
  std::optional<std::uint8_t> poll_flags(double timeout_s);

 private:
  bool send_command(const CommandMsg& cmd);
  std::optional<TelemetryMsg> recv_telemetry(double timeout_s);

  BridgePlantConfig cfg_;
  int sock_ = -1;
  std::uint32_t next_seq_ = 1;
  SeqTracker telem_seq_;
  std::uint64_t sim_time_us_ = 0;
  double time_s_ = 0;  // accumulated requested time [s]
  Vec x_ = Vec::Zero(6);  // dynamic layout, from telemetry
  std::uint8_t flags_ = 0;
  std::mt19937_64 loss_rng_;
};

}  // namespace crs
