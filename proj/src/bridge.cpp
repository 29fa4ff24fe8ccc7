#include "crs/bridge.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace crs {

namespace {

constexpr std::uint8_t kMagic0 = 0x43, kMagic1 = 0x52, kVersion = 0x01;

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f32(std::vector<std::uint8_t>& b, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(b, bits);
}
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}
float get_f32(const std::uint8_t* p) {
  const std::uint32_t bits = get_u32(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t len) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(data),
              static_cast<uInt>(len)));
}

std::vector<std::uint8_t> frame_out(MsgType type, std::uint32_t seq, std::uint64_t stamp_us) {
  std::vector<std::uint8_t> b;
  b.reserve(kMaxFrameSize);
  b.push_back(kMagic0);
  b.push_back(kMagic1);
  b.push_back(kVersion);
  b.push_back(static_cast<std::uint8_t>(type));
  put_u32(b, seq);
  put_u64(b, stamp_us);
  return b;
}

void seal(std::vector<std::uint8_t>& b) { put_u32(b, crc_of(b.data(), b.size())); }

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  const std::string host = ep.host == "localhost" || ep.host.empty() ? "127.0.0.1" : ep.host;
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw std::runtime_error("bridge: cannot resolve host '" + ep.host + "'");
  return addr;
}

int make_socket() {
  const int s = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (s < 0) throw std::runtime_error("bridge: socket creation failed");
  return s;
}

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

/// Blocks up to timeout_s for one datagram; empty result on timeout.
std::optional<std::vector<std::uint8_t>> recv_datagram(int sock, double timeout_s,
                                                       sockaddr_in* from = nullptr) {
  pollfd pfd{sock, POLLIN, 0};
  const int ms = timeout_s <= 0 ? 0 : std::max(1, static_cast<int>(timeout_s * 1000));
  if (::poll(&pfd, 1, ms) <= 0) return std::nullopt;
  std::vector<std::uint8_t> buf(kMaxFrameSize + 64);
  sockaddr_in src{};
  socklen_t slen = sizeof(src);
  const ssize_t n = ::recvfrom(sock, buf.data(), buf.size(), 0,
                               reinterpret_cast<sockaddr*>(&src), &slen);
  if (n < 0) return std::nullopt;
  buf.resize(static_cast<std::size_t>(n));
  if (from) *from = src;
  return buf;
}

Vec dynamic_view(ModelType layout, const Vec& x) {
  if (layout == ModelType::Dynamic) return x;
  Vec d = Vec::Zero(6);
  d.head(4) = x;
  return d;
}

}  // namespace

std::string to_string(DecodeStatus s) {
  switch (s) {
    case DecodeStatus::Ok: return "ok";
    case DecodeStatus::TooShort: return "too_short";
    case DecodeStatus::BadMagic: return "bad_magic";
    case DecodeStatus::BadVersion: return "bad_version";
    case DecodeStatus::BadType: return "bad_type";
    case DecodeStatus::BadLength: return "bad_length";
    case DecodeStatus::BadCrc: return "bad_crc";
    case DecodeStatus::BadPayload: return "bad_payload";
  }
  return "unknown";
}

std::vector<std::uint8_t> encode_frame(const BridgeMsg& msg) {
  std::vector<std::uint8_t> b;
  if (const auto* c = std::get_if<CommandMsg>(&msg)) {
    b = frame_out(MsgType::Command, c->seq, c->stamp_us);
    put_f32(b, c->delta);
    put_f32(b, c->a);
  } else if (const auto* t = std::get_if<TelemetryMsg>(&msg)) {
    b = frame_out(MsgType::Telemetry, t->seq, t->stamp_us);
    for (float v : t->pose) put_f32(b, v);
    for (float v : t->motion) put_f32(b, v);
    put_f32(b, t->battery_v);
    b.push_back(t->flags);
  } else {
    const auto& h = std::get<HeartbeatMsg>(msg);
    b = frame_out(MsgType::Heartbeat, h.seq, h.stamp_us);
  }
  seal(b);
  return b;
}

DecodeResult decode_frame(const std::uint8_t* data, std::size_t len) {
  DecodeResult r;
  if (len < kHeartbeatFrameSize || len > kMaxFrameSize) {
    r.status = len < kHeartbeatFrameSize ? DecodeStatus::TooShort : DecodeStatus::BadLength;
    return r;
  }
  if (data[0] != kMagic0 || data[1] != kMagic1) {
    r.status = DecodeStatus::BadMagic;
    return r;
  }
  if (data[2] != kVersion) {
    r.status = DecodeStatus::BadVersion;
    return r;
  }
  const std::uint8_t type = data[3];
  std::size_t expect;
  switch (type) {
    case 0x01: expect = kCommandFrameSize; break;
    case 0x02: expect = kTelemetryFrameSize; break;
    case 0x03: expect = kHeartbeatFrameSize; break;
    default: r.status = DecodeStatus::BadType; return r;
  }
  if (len != expect) {
    r.status = DecodeStatus::BadLength;
    return r;
  }
  if (get_u32(data + len - 4) != crc_of(data, len - 4)) {
    r.status = DecodeStatus::BadCrc;
    return r;
  }
  const std::uint32_t seq = get_u32(data + 4);
  const std::uint64_t stamp = get_u64(data + 8);
  const std::uint8_t* pl = data + kHeaderSize;
  if (type == 0x01) {
    CommandMsg c{seq, stamp, get_f32(pl), get_f32(pl + 4)};
    if (!std::isfinite(c.delta) || !std::isfinite(c.a) || std::abs(c.a) > 1.0f) {
      r.status = DecodeStatus::BadPayload;
      return r;
    }
    r.msg = c;
  } else if (type == 0x02) {
    TelemetryMsg t;
    t.seq = seq;
    t.stamp_us = stamp;
    for (int i = 0; i < 3; ++i) t.pose[i] = get_f32(pl + 4 * i);
    for (int i = 0; i < 3; ++i) t.motion[i] = get_f32(pl + 12 + 4 * i);
    t.battery_v = get_f32(pl + 24);
    t.flags = pl[28];
    for (float v : t.pose)
      if (!std::isfinite(v)) {
        r.status = DecodeStatus::BadPayload;
        return r;
      }
    for (float v : t.motion)
      if (!std::isfinite(v)) {
        r.status = DecodeStatus::BadPayload;
        return r;
      }
    if (!std::isfinite(t.battery_v)) {
      r.status = DecodeStatus::BadPayload;
      return r;
    }
    r.msg = t;
  } else {
    r.msg = HeartbeatMsg{seq, stamp};
  }
  r.status = DecodeStatus::Ok;
  return r;
}

DecodeResult decode_frame(const std::vector<std::uint8_t>& bytes) {
  return decode_frame(bytes.data(), bytes.size());
}

bool SeqTracker::accept(std::uint32_t seq) {
  if (has_last_) {
    // serial-number arithmetic: fresh when ahead within half the space
    const std::uint32_t delta = seq - last_;
    if (delta == 0 || delta >= (1u << 31)) return false;
  }
  has_last_ = true;
  last_ = seq;
  return true;
}

void SeqTracker::reset() { has_last_ = false; }

Endpoint Endpoint::parse(const std::string& text) {
  const std::size_t colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size())
    throw std::invalid_argument("bridge: endpoint must be host:port, got '" + text + "'");
  Endpoint ep;
  ep.host = text.substr(0, colon);
  const std::string ps = text.substr(colon + 1);
  char* end = nullptr;
  const unsigned long p = std::strtoul(ps.c_str(), &end, 10);
  if (end == ps.c_str() || *end != '\0' || p > 65535)
    throw std::invalid_argument("bridge: bad port in '" + text + "'");
  ep.port = static_cast<std::uint16_t>(p);
  return ep;
}

std::string Endpoint::str() const { return host + ":" + std::to_string(port); }

PlantServer::PlantServer(const Endpoint& ep, PlantServerConfig cfg) : cfg_(std::move(cfg)) {
  const VehicleModel model(cfg_.model, cfg_.params);
  x_ = cfg_.x0.size() ? cfg_.x0 : Vec::Zero(model.nx());
  if (x_.size() != model.nx())
    throw std::invalid_argument("bridge: x0 does not match the model layout");
  sock_ = make_socket();
  sockaddr_in addr = resolve(ep);
  if (::bind(sock_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(sock_);
    sock_ = -1;
    throw std::runtime_error("bridge: cannot bind " + ep.str());
  }
  sockaddr_in bound{};
  socklen_t blen = sizeof(bound);
  ::getsockname(sock_, reinterpret_cast<sockaddr*>(&bound), &blen);
  port_ = ntohs(bound.sin_port);
}

PlantServer::~PlantServer() {
  stop();
  if (sock_ >= 0) ::close(sock_);
}

void PlantServer::start() {
  stop_ = false;
  thread_ = std::thread([this] { serve_loop(); });
}

void PlantServer::run() {
  stop_ = false;
  serve_loop();
}

void PlantServer::stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
}

Vec PlantServer::state() const {
  std::lock_guard<std::mutex> lock(state_mu_);
  return x_;
}

void PlantServer::serve_loop() {
  const VehicleModel model(cfg_.model, cfg_.params);
  const double idle_period = 1.0 / cfg_.idle_telemetry_hz;
  const std::uint64_t dt_us = static_cast<std::uint64_t>(std::llround(cfg_.dt * 1e6));
  // at most one simulated second per command keeps a bogus far-future
  // stamp from stalling the loop; the client just resends until it catches up
  const std::uint64_t max_advance_us = 1000000;

  SeqTracker cmd_seq;
  std::uint32_t telem_seq = 0;
  sockaddr_in peer{};
  bool have_peer = false;
  bool safe_stop = false;
  Vec2 held(0, 0);
  double last_cmd_wall = now_s();
  double last_telem_wall = 0;

  auto emit = [&] {
    if (!have_peer) return;
    Vec xd;
    {
      std::lock_guard<std::mutex> lock(state_mu_);
      xd = dynamic_view(model.type(), x_);
    }
    TelemetryMsg t;
    t.seq = ++telem_seq;
    t.stamp_us = static_cast<std::uint64_t>(std::llround(sim_time_ * 1e6));
    for (int i = 0; i < 3; ++i) t.pose[i] = static_cast<float>(xd(i));
    for (int i = 0; i < 3; ++i) t.motion[i] = static_cast<float>(xd(3 + i));
    t.battery_v = 7.4f;
    t.flags = safe_stop ? 0x01 : 0x00;
    const std::vector<std::uint8_t> frame = encode_frame(t);
    ::sendto(sock_, frame.data(), frame.size(), 0, reinterpret_cast<sockaddr*>(&peer),
             sizeof(peer));
    last_telem_wall = now_s();
  };

  while (!stop_) {
    sockaddr_in src{};
    const auto dgram = recv_datagram(sock_, 0.01, &src);
    if (dgram) {
      const DecodeResult r = decode_frame(*dgram);
      if (r.status == DecodeStatus::Ok) {
        peer = src;
        have_peer = true;
        if (const auto* c = std::get_if<CommandMsg>(&r.msg); c && cmd_seq.accept(c->seq)) {
          last_cmd_wall = now_s();
          safe_stop = false;
          held = Vec2(c->delta, c->a);
          const std::uint64_t now_us =
              static_cast<std::uint64_t>(std::llround(sim_time_ * 1e6));
          if (c->stamp_us > now_us) {
            const std::uint64_t span = c->stamp_us - now_us;
            // nearest whole number of steps; the stamp is the authoritative
            // clock so sub-step rounding does not accumulate tick to tick
            std::uint64_t steps = (span + dt_us / 2) / dt_us;
            steps = std::clamp<std::uint64_t>(steps, 1, max_advance_us / dt_us);
            std::lock_guard<std::mutex> lock(state_mu_);
            for (std::uint64_t i = 0; i < steps; ++i) x_ = model.step_rk4(x_, held, cfg_.dt);
            const bool reached = steps * dt_us + dt_us >= span;
            sim_time_ = reached ? static_cast<double>(c->stamp_us) * 1e-6
                                : static_cast<double>(now_us + steps * dt_us) * 1e-6;
          }
          emit();
        }
      }
    }
    const double now = now_s();
    if (have_peer && !safe_stop && now - last_cmd_wall > cfg_.command_timeout) {
      safe_stop = true;
      held = Vec2(0, 0);
      emit();
    }
    if (have_peer && now - last_telem_wall >= idle_period) emit();
  }
}

BridgePlant::BridgePlant(const Endpoint& server, BridgePlantConfig cfg)
    : cfg_(cfg), loss_rng_(cfg.loss_seed) {
  sock_ = make_socket();
  sockaddr_in addr = resolve(server);
  if (::connect(sock_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(sock_);
    sock_ = -1;
    throw std::runtime_error("bridge: cannot reach " + server.str());
  }
  // initial sync: a command stamped zero never advances the plant but
  // makes the server report its current state and sim time
  for (int attempt = 0;; ++attempt) {
    if (attempt > cfg_.max_retries) throw std::runtime_error("bridge: plant unreachable");
    send_command({next_seq_++, 0, 0.0f, 0.0f});
    if (const auto t = recv_telemetry(cfg_.reply_timeout)) {
      sim_time_us_ = t->stamp_us;
      time_s_ = static_cast<double>(sim_time_us_) * 1e-6;
      break;
    }
  }
}

BridgePlant::~BridgePlant() {
  if (sock_ >= 0) ::close(sock_);
}

Vec BridgePlant::state() const { return x_; }

std::optional<std::uint8_t> BridgePlant::poll_flags(double timeout_s) {
  const auto t = recv_telemetry(timeout_s);
  if (!t) return std::nullopt;
  return t->flags;
}

bool BridgePlant::send_command(const CommandMsg& cmd) {
  if (cfg_.send_loss > 0 &&
      std::uniform_real_distribution<double>(0, 1)(loss_rng_) < cfg_.send_loss)
    return false;
  const std::vector<std::uint8_t> frame = encode_frame(cmd);
  return ::send(sock_, frame.data(), frame.size(), 0) == static_cast<ssize_t>(frame.size());
}

std::optional<TelemetryMsg> BridgePlant::recv_telemetry(double timeout_s) {
  const double deadline = now_s() + timeout_s;
  for (;;) {
    const double left = deadline - now_s();
    if (left <= 0) return std::nullopt;
    const auto dgram = recv_datagram(sock_, left);
    if (!dgram) return std::nullopt;
    if (cfg_.recv_loss > 0 &&
        std::uniform_real_distribution<double>(0, 1)(loss_rng_) < cfg_.recv_loss)
      continue;
    const DecodeResult r = decode_frame(*dgram);
    if (r.status != DecodeStatus::Ok) continue;
    const auto* t = std::get_if<TelemetryMsg>(&r.msg);
    if (!t || !telem_seq_.accept(t->seq)) continue;
    for (int i = 0; i < 3; ++i) x_(i) = t->pose[i];
    for (int i = 0; i < 3; ++i) x_(3 + i) = t->motion[i];
    flags_ = t->flags;
    return *t;
  }
}

void BridgePlant::apply(const Vec2& u, double duration,
                        const std::function<void(double, const Vec&)>& on_substep) {
  // accumulate in seconds so microsecond rounding does not drift tick to tick
  time_s_ += duration;
  const std::uint64_t target =
      std::max(sim_time_us_ + 1, static_cast<std::uint64_t>(std::llround(time_s_ * 1e6)));
  const float delta = static_cast<float>(u(0));
  const float a = static_cast<float>(std::clamp(u(1), -1.0, 1.0));
  for (int attempt = 0;; ++attempt) {
    if (attempt > cfg_.max_retries) throw std::runtime_error("bridge: plant unreachable");
    send_command({next_seq_++, target, delta, a});
    const auto t = recv_telemetry(cfg_.reply_timeout);
    if (t && t->stamp_us >= target) {
      sim_time_us_ = t->stamp_us;
      break;
    }
  }
  if (on_substep) on_substep(static_cast<double>(sim_time_us_) * 1e-6, x_);
}

}  // namespace crs
