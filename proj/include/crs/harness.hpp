#pragma once

#include <memory>
#include <string>
#include <vector>

#include "crs/controllers.hpp"
#include "crs/estimation.hpp"
#include "crs/safety.hpp"
#include "crs/track.hpp"

namespace crs {

enum class PlantKind { Sim, Bridge };
enum class ControllerKind { TrackingPid, PathPid, FfPid, TrackingMpc, Mpcc };
enum class EstimatorKind { Velocity, Ekf, FullState };
enum class SafetyKind { None, Predictive };

/// Everything one closed-loop episode needs, loadable from a
/// crs-config-v1 key/value file. Parsing and serialization are lossless
/// through KvDoc, so configs round-trip byte for byte.
struct PipelineConfig {
  std::string track_file = "tracks/icra_oval";
  std::string params_file;  // empty: built-in defaults

  PlantKind plant = PlantKind::Sim;
  ModelType plant_model = ModelType::Dynamic;
  double plant_dt = 0.001;
  std::string plant_endpoint;  // bridge only, "host:port"

  ControllerKind controller = ControllerKind::Mpcc;
  EstimatorKind estimator = EstimatorKind::Ekf;
  SafetyKind safety = SafetyKind::None;

  double controller_hz = 30.0;
  double duration_s = 0.0;  // 0: run until lap_target
  int lap_target = 0;       // 0: run until duration_s
  std::uint64_t seed = 1;

  // initial state, track-relative
  double start_s = 0.0;
  double start_e_lat = 0.0;
  double start_v = 0.3;

  // pose sensor (always present) and optional imu
  double pose_rate_hz = 100.0;
  double pose_noise_xy = 0.001;
  double pose_noise_psi = 0.002;
  double pose_latency = 0.0;
  bool imu_enabled = false;
  double imu_rate_hz = 200.0;
  double imu_noise = 0.05;
  double imu_latency = 0.0;
  double est_cutoff_hz = 5.0;  // velocity estimator smoothing

  // controller knobs (shipped defaults; everything else uses the
  // controllers module defaults)
  double setpoint_x = 1.0, setpoint_y = 0.0;
  double tracking_pid_accel_kp = 0.5, tracking_pid_accel_kd = 0.8;
  double tracking_pid_steer_kp = 2.0, tracking_pid_steer_kd = 0.2;
  double path_pid_kp = 4.0, path_pid_ki = 1.0, path_pid_kd = 0.5;
  double path_pid_drive = 0.15;
  double ffpid_kc = 1.5, ffpid_kd = 0.02, ffpid_xla = 0.3;
  double ffpid_a_target = 0.5, ffpid_ka = 0.12, ffpid_kug = 0.0;
  int mpc_n = 30;
  double mpc_q_adv = 1.0, mpc_v_max = 2.0;
  int safety_n = 40;
  double safety_v_safe = 0.3;

  static PipelineConfig from_doc(const KvDoc& doc);
  static PipelineConfig load(const std::string& path);
  KvDoc to_doc() const;
  void validate() const;
};

/// One controller tick of the episode.
struct LogRow {
  double t = 0;
  Vec x_true;   // dynamic layout (6)
  Vec x_est;    // dynamic layout (6)
  Vec2 u_d{0, 0};
  Vec2 u{0, 0};
  FilterStatus filter_status = FilterStatus::PassThrough;
  SolveStatus solver_status = SolveStatus::Converged;
  int solver_iters = 0;
  double solver_kkt = 0;
  bool degraded = false;
  double s = 0;
  double e_lat = 0;
};

struct LapStats {
  int index = 0;
  double time_s = 0;
  double max_speed = 0;
  double max_yaw_rate = 0;
  int violations = 0;
};

struct EpisodeLog {
  std::vector<LogRow> rows;
  std::vector<LapStats> laps;
  bool aborted = false;
  std::string abort_reason;

  static const std::vector<std::string>& columns();
  std::string to_csv() const;
};

struct EpisodeSummary {
  bool has_laps = false;
  int lap_count = 0;
  double lap_time_mean = 0;
  double lap_time_std = 0;
  double max_speed = 0;
  double max_yaw_rate = 0;
  int violations = 0;
  bool aborted = false;

  KvDoc to_doc() const;
};

EpisodeSummary summarize(const EpisodeLog& log);

/// Plant the harness can drive: the simulator in this module, the UDP
/// bridge in the bridge module.
class Plant {
 public:
  virtual ~Plant() = default;
  virtual Vec state() const = 0;  // dynamic layout (6)
  /// Advances the plant by `duration` holding `u`; `on_substep(t, x)` runs
  /// after every internal step so sensors can sample mid-tick.
  virtual void apply(const Vec2& u, double duration,
                     const std::function<void(double, const Vec&)>& on_substep) = 0;
};

class SimPlant : public Plant {
 public:
  SimPlant(ModelType model, ModelParams params, double dt, const Vec& x0, double t0 = 0);
  Vec state() const override;
  void apply(const Vec2& u, double duration,
             const std::function<void(double, const Vec&)>& on_substep) override;

 private:
  VehicleModel model_;
  double dt_;
  Vec x_;  // model layout
  double t_;
};

/// Runs the configured pipeline against an in-process simulated plant.
EpisodeLog run_episode(const PipelineConfig& cfg);
/// Same loop against a caller-supplied plant (used by the bridge).
EpisodeLog run_episode(const PipelineConfig& cfg, Plant& plant);

}  // namespace crs
