#include "crs/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

namespace crs {

namespace {

constexpr const char* kSchema = "crs-config-v1";

std::string plant_name(PlantKind k) { return k == PlantKind::Sim ? "sim" : "bridge"; }
std::string model_name(ModelType m) { return m == ModelType::Dynamic ? "dynamic" : "kinematic"; }
std::string controller_name(ControllerKind k) {
  switch (k) {
    case ControllerKind::TrackingPid: return "tracking_pid";
    case ControllerKind::PathPid: return "path_pid";
    case ControllerKind::FfPid: return "ffpid";
    case ControllerKind::TrackingMpc: return "tracking_mpc";
    case ControllerKind::Mpcc: return "mpcc";
  }
  return "mpcc";
}
std::string estimator_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Velocity: return "velocity";
    case EstimatorKind::Ekf: return "ekf";
    case EstimatorKind::FullState: return "full_state";
  }
  return "ekf";
}
std::string safety_name(SafetyKind k) { return k == SafetyKind::None ? "none" : "predictive"; }

PlantKind parse_plant(const std::string& s) {
  if (s == "sim") return PlantKind::Sim;
  if (s == "bridge") return PlantKind::Bridge;
  throw ParseError("config: unknown plant '" + s + "'");
}
ModelType parse_model(const std::string& s) {
  if (s == "dynamic") return ModelType::Dynamic;
  if (s == "kinematic") return ModelType::Kinematic;
  throw ParseError("config: unknown model '" + s + "'");
}
ControllerKind parse_controller(const std::string& s) {
  if (s == "tracking_pid") return ControllerKind::TrackingPid;
  if (s == "path_pid") return ControllerKind::PathPid;
  if (s == "ffpid") return ControllerKind::FfPid;
  if (s == "tracking_mpc") return ControllerKind::TrackingMpc;
  if (s == "mpcc") return ControllerKind::Mpcc;
  throw ParseError("config: unknown controller '" + s + "'");
}
EstimatorKind parse_estimator(const std::string& s) {
  if (s == "velocity") return EstimatorKind::Velocity;
  if (s == "ekf") return EstimatorKind::Ekf;
  if (s == "full_state") return EstimatorKind::FullState;
  throw ParseError("config: unknown estimator '" + s + "'");
}
SafetyKind parse_safety(const std::string& s) {
  if (s == "none") return SafetyKind::None;
  if (s == "predictive") return SafetyKind::Predictive;
  throw ParseError("config: unknown safety mode '" + s + "'");
}

Vec dynamic_view(ModelType layout, const Vec& x) {
  if (layout == ModelType::Dynamic) return x;
  Vec d = Vec::Zero(6);
  d.head(4) = x;
  return d;
}

}  // namespace

PipelineConfig PipelineConfig::from_doc(const KvDoc& doc) {
  const std::string schema = doc.get_str("schema", "");
  if (schema != kSchema) throw ParseError("config: expected schema " + std::string(kSchema));
  PipelineConfig c;
  c.track_file = doc.get_str("track_file", c.track_file);
  c.params_file = doc.get_str("params_file", c.params_file);
  c.plant = parse_plant(doc.get_str("plant", plant_name(c.plant)));
  c.plant_model = parse_model(doc.get_str("plant_model", model_name(c.plant_model)));
  c.plant_dt = doc.get_num("plant_dt", c.plant_dt);
  c.plant_endpoint = doc.get_str("plant_endpoint", c.plant_endpoint);
  c.controller = parse_controller(doc.get_str("controller", controller_name(c.controller)));
  c.estimator = parse_estimator(doc.get_str("estimator", estimator_name(c.estimator)));
  c.safety = parse_safety(doc.get_str("safety", safety_name(c.safety)));
  c.controller_hz = doc.get_num("controller_hz", c.controller_hz);
  c.duration_s = doc.get_num("duration_s", c.duration_s);
  c.lap_target = static_cast<int>(doc.get_int("lap_target", c.lap_target));
  c.seed = static_cast<std::uint64_t>(doc.get_int("seed", static_cast<long long>(c.seed)));
  c.start_s = doc.get_num("start_s", c.start_s);
  c.start_e_lat = doc.get_num("start_e_lat", c.start_e_lat);
  c.start_v = doc.get_num("start_v", c.start_v);
  c.pose_rate_hz = doc.get_num("pose_rate_hz", c.pose_rate_hz);
  c.pose_noise_xy = doc.get_num("pose_noise_xy", c.pose_noise_xy);
  c.pose_noise_psi = doc.get_num("pose_noise_psi", c.pose_noise_psi);
  c.pose_latency = doc.get_num("pose_latency", c.pose_latency);
  c.imu_enabled = doc.get_bool("imu_enabled", c.imu_enabled);
  c.imu_rate_hz = doc.get_num("imu_rate_hz", c.imu_rate_hz);
  c.imu_noise = doc.get_num("imu_noise", c.imu_noise);
  c.imu_latency = doc.get_num("imu_latency", c.imu_latency);
  c.est_cutoff_hz = doc.get_num("est_cutoff_hz", c.est_cutoff_hz);
  c.setpoint_x = doc.get_num("setpoint_x", c.setpoint_x);
  c.setpoint_y = doc.get_num("setpoint_y", c.setpoint_y);
  c.tracking_pid_accel_kp = doc.get_num("tracking_pid_accel_kp", c.tracking_pid_accel_kp);
  c.tracking_pid_accel_kd = doc.get_num("tracking_pid_accel_kd", c.tracking_pid_accel_kd);
  c.tracking_pid_steer_kp = doc.get_num("tracking_pid_steer_kp", c.tracking_pid_steer_kp);
  c.tracking_pid_steer_kd = doc.get_num("tracking_pid_steer_kd", c.tracking_pid_steer_kd);
  c.path_pid_kp = doc.get_num("path_pid_kp", c.path_pid_kp);
  c.path_pid_ki = doc.get_num("path_pid_ki", c.path_pid_ki);
  c.path_pid_kd = doc.get_num("path_pid_kd", c.path_pid_kd);
  c.path_pid_drive = doc.get_num("path_pid_drive", c.path_pid_drive);
  c.ffpid_kc = doc.get_num("ffpid_kc", c.ffpid_kc);
  c.ffpid_kd = doc.get_num("ffpid_kd", c.ffpid_kd);
  c.ffpid_xla = doc.get_num("ffpid_xla", c.ffpid_xla);
  c.ffpid_a_target = doc.get_num("ffpid_a_target", c.ffpid_a_target);
  c.ffpid_ka = doc.get_num("ffpid_ka", c.ffpid_ka);
  c.ffpid_kug = doc.get_num("ffpid_kug", c.ffpid_kug);
  c.mpc_n = static_cast<int>(doc.get_int("mpc_n", c.mpc_n));
  c.mpc_q_adv = doc.get_num("mpc_q_adv", c.mpc_q_adv);
  c.mpc_v_max = doc.get_num("mpc_v_max", c.mpc_v_max);
  c.safety_n = static_cast<int>(doc.get_int("safety_n", c.safety_n));
  c.safety_v_safe = doc.get_num("safety_v_safe", c.safety_v_safe);
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  return from_doc(KvDoc::load(path));
}

KvDoc PipelineConfig::to_doc() const {
  KvDoc d;
  d.set("schema", std::string(kSchema));
  d.set("track_file", track_file);
  if (!params_file.empty()) d.set("params_file", params_file);
  d.set("plant", plant_name(plant));
  d.set("plant_model", model_name(plant_model));
  d.set("plant_dt", plant_dt);
  if (!plant_endpoint.empty()) d.set("plant_endpoint", plant_endpoint);
  d.set("controller", controller_name(controller));
  d.set("estimator", estimator_name(estimator));
  d.set("safety", safety_name(safety));
  d.set("controller_hz", controller_hz);
  d.set("duration_s", duration_s);
  d.set("lap_target", static_cast<long long>(lap_target));
  d.set("seed", static_cast<long long>(seed));
  d.set("start_s", start_s);
  d.set("start_e_lat", start_e_lat);
  d.set("start_v", start_v);
  d.set("pose_rate_hz", pose_rate_hz);
  d.set("pose_noise_xy", pose_noise_xy);
  d.set("pose_noise_psi", pose_noise_psi);
  d.set("pose_latency", pose_latency);
  d.set("imu_enabled", imu_enabled);
  d.set("imu_rate_hz", imu_rate_hz);
  d.set("imu_noise", imu_noise);
  d.set("imu_latency", imu_latency);
  d.set("est_cutoff_hz", est_cutoff_hz);
  d.set("setpoint_x", setpoint_x);
  d.set("setpoint_y", setpoint_y);
  d.set("tracking_pid_accel_kp", tracking_pid_accel_kp);
  d.set("tracking_pid_accel_kd", tracking_pid_accel_kd);
  d.set("tracking_pid_steer_kp", tracking_pid_steer_kp);
  d.set("tracking_pid_steer_kd", tracking_pid_steer_kd);
  d.set("path_pid_kp", path_pid_kp);
  d.set("path_pid_ki", path_pid_ki);
  d.set("path_pid_kd", path_pid_kd);
  d.set("path_pid_drive", path_pid_drive);
  d.set("ffpid_kc", ffpid_kc);
  d.set("ffpid_kd", ffpid_kd);
  d.set("ffpid_xla", ffpid_xla);
  d.set("ffpid_a_target", ffpid_a_target);
  d.set("ffpid_ka", ffpid_ka);
  d.set("ffpid_kug", ffpid_kug);
  d.set("mpc_n", static_cast<long long>(mpc_n));
  d.set("mpc_q_adv", mpc_q_adv);
  d.set("mpc_v_max", mpc_v_max);
  d.set("safety_n", static_cast<long long>(safety_n));
  d.set("safety_v_safe", safety_v_safe);
  return d;
}

void PipelineConfig::validate() const {
  if (!(plant_dt > 0)) throw std::invalid_argument("config: plant_dt must be > 0");
  if (!(controller_hz > 0)) throw std::invalid_argument("config: controller_hz must be > 0");
  if (plant_dt > 1.0 / controller_hz + 1e-12)
    throw std::invalid_argument("config: plant_dt exceeds the controller period");
  if (duration_s < 0) throw std::invalid_argument("config: duration_s must be >= 0");
  if (lap_target < 0) throw std::invalid_argument("config: lap_target must be >= 0");
  if (!(pose_rate_hz > 0)) throw std::invalid_argument("config: pose_rate_hz must be > 0");
  if (pose_latency < 0 || imu_latency < 0)
    throw std::invalid_argument("config: latency must be >= 0");
  if (!(est_cutoff_hz > 0) || est_cutoff_hz >= 0.5 * pose_rate_hz)
    throw std::invalid_argument("config: est_cutoff_hz must sit below the pose Nyquist rate");
  if (!std::filesystem::exists(track_file))
    throw std::invalid_argument("config: track file not found: " + track_file);
  if (!params_file.empty() && !std::filesystem::exists(params_file))
    throw std::invalid_argument("config: params file not found: " + params_file);
  if (plant == PlantKind::Bridge && plant_endpoint.empty())
    throw std::invalid_argument("config: bridge plant needs plant_endpoint");
  if (mpc_n < 1 || safety_n < 1) throw std::invalid_argument("config: horizons must be >= 1");
}

const std::vector<std::string>& EpisodeLog::columns() {
  static const std::vector<std::string> cols = {
      "t",       "x",       "y",        "psi",     "v_x",     "v_y",     "omega",
      "est_x",   "est_y",   "est_psi",  "est_v_x", "est_v_y", "est_omega",
      "u_d_delta", "u_d_a", "u_delta",  "u_a",     "filter",  "solver",  "iters",
      "kkt",     "degraded", "s",       "e_lat"};
  return cols;
}

std::string EpisodeLog::to_csv() const {
  std::ostringstream out;
  const auto& cols = columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  for (const LogRow& r : rows) {
    out << format_double(r.t);
    for (int i = 0; i < 6; ++i) out << "," << format_double(r.x_true(i));
    for (int i = 0; i < 6; ++i) out << "," << format_double(r.x_est(i));
    out << "," << format_double(r.u_d(0)) << "," << format_double(r.u_d(1));
    out << "," << format_double(r.u(0)) << "," << format_double(r.u(1));
    out << "," << to_string(r.filter_status) << "," << to_string(r.solver_status);
    out << "," << r.solver_iters << "," << format_double(r.solver_kkt);
    out << "," << (r.degraded ? 1 : 0);
    out << "," << format_double(r.s) << "," << format_double(r.e_lat) << "\n";
  }
  return out.str();
}

EpisodeSummary summarize(const EpisodeLog& log) {
  EpisodeSummary s;
  s.aborted = log.aborted;
  // the first recorded lap is the out-lap from the grid; timing statistics
  // use flying laps when there are any
  std::vector<const LapStats*> timed;
  for (const LapStats& lap : log.laps) {
    s.max_speed = std::max(s.max_speed, lap.max_speed);
    s.max_yaw_rate = std::max(s.max_yaw_rate, lap.max_yaw_rate);
    s.violations += lap.violations;
    if (lap.index > 0 || log.laps.size() == 1) timed.push_back(&lap);
  }
  s.lap_count = static_cast<int>(log.laps.size());
  if (timed.empty()) return s;
  s.has_laps = true;
  double mean = 0;
  for (const LapStats* lap : timed) mean += lap->time_s;
  mean /= static_cast<double>(timed.size());
  double var = 0;
  for (const LapStats* lap : timed) var += (lap->time_s - mean) * (lap->time_s - mean);
  // sample standard deviation to match the usual lap-time reporting
  if (timed.size() > 1) var /= static_cast<double>(timed.size() - 1);
  s.lap_time_mean = mean;
  s.lap_time_std = std::sqrt(var);
  return s;
}

KvDoc EpisodeSummary::to_doc() const {
  KvDoc d;
  d.set("schema", std::string("crs-summary-v1"));
  d.set("has_laps", has_laps);
  d.set("lap_count", static_cast<long long>(lap_count));
  if (has_laps) {
    d.set("lap_time_mean_s", lap_time_mean);
    d.set("lap_time_std_s", lap_time_std);
  } else {
    d.set("result", std::string("no laps"));
  }
  d.set("max_speed", max_speed);
  d.set("max_yaw_rate", max_yaw_rate);
  d.set("violations", static_cast<long long>(violations));
  d.set("aborted", aborted);
  return d;
}

SimPlant::SimPlant(ModelType model, ModelParams params, double dt, const Vec& x0, double t0)
    : model_(model, std::move(params)), dt_(dt), x_(x0), t_(t0) {}

Vec SimPlant::state() const { return dynamic_view(model_.type(), x_); }

void SimPlant::apply(const Vec2& u, double duration,
                     const std::function<void(double, const Vec&)>& on_substep) {
  // cover the duration exactly so plant time stays on the tick clock; the
  // step used is the configured dt stretched by at most half a step
  const int steps = std::max(1, static_cast<int>(std::round(duration / dt_)));
  const double h = duration / steps;
  const double t0 = t_;
  for (int i = 0; i < steps; ++i) {
    x_ = model_.step_rk4(x_, u, h);
    t_ = t0 + (i + 1) * h;
    if (on_substep) on_substep(t_, state());
  }
}

namespace {

std::unique_ptr<Controller> make_controller(const PipelineConfig& cfg, const Track& track,
                                            const ModelParams& params) {
  switch (cfg.controller) {
    case ControllerKind::TrackingPid: {
      PidGains g;
      g.accel = {cfg.tracking_pid_accel_kp, 0.0, cfg.tracking_pid_accel_kd};
      g.steer = {cfg.tracking_pid_steer_kp, 0.0, cfg.tracking_pid_steer_kd};
      return std::make_unique<TrackingPid>(g, Vec2(cfg.setpoint_x, cfg.setpoint_y));
    }
    case ControllerKind::PathPid: {
      PidGains g;
      g.steer = {cfg.path_pid_kp, cfg.path_pid_ki, cfg.path_pid_kd};
      return std::make_unique<PathPid>(track, g, params, cfg.path_pid_drive);
    }
    case ControllerKind::FfPid: {
      FfPidConfig c;
      c.k_c = cfg.ffpid_kc;
      c.k_d = cfg.ffpid_kd;
      c.x_la = cfg.ffpid_xla;
      c.a_target = cfg.ffpid_a_target;
      c.k_a = cfg.ffpid_ka;
      c.k_ug = cfg.ffpid_kug;
      return std::make_unique<FfPid>(track, c, params);
    }
    case ControllerKind::TrackingMpc: {
      MpcConfig c;
      c.N = cfg.mpc_n;
      c.model = cfg.plant_model;
      auto mpc = std::make_unique<TrackingMpc>(c, params);
      // reference: hold the configured set-point
      Vec target = Vec::Zero(c.model == ModelType::Dynamic ? 6 : 4);
      target(0) = cfg.setpoint_x;
      target(1) = cfg.setpoint_y;
      mpc->set_reference(std::vector<Vec>(c.N + 1, target), std::vector<Vec2>(c.N, Vec2::Zero()));
      return mpc;
    }
    case ControllerKind::Mpcc: {
      MpcConfig c;
      c.N = cfg.mpc_n;
      c.model = cfg.plant_model;
      c.Q_adv = cfg.mpc_q_adv;
      c.v_max = cfg.mpc_v_max;
      return std::make_unique<Mpcc>(track, c, params);
    }
  }
  throw std::logic_error("config: unhandled controller kind");
}

}  // namespace

EpisodeLog run_episode(const PipelineConfig& cfg, Plant& plant) {
  cfg.validate();
  const Track track = Track::load(cfg.track_file);
  const ModelParams params =
      cfg.params_file.empty() ? ModelParams{} : ModelParams::load(cfg.params_file);

  const double T = 1.0 / cfg.controller_hz;
  // lap-target-only runs are capped so a stuck car still terminates
  const double hard_cap_s = 600.0;
  const int max_ticks =
      cfg.duration_s > 0
          ? static_cast<int>(std::round(cfg.duration_s * cfg.controller_hz))
          : (cfg.lap_target > 0 ? static_cast<int>(std::round(hard_cap_s * cfg.controller_hz)) : 0);

  // sensors: pose always, imu optionally (dynamic plant only)
  std::vector<SensorInstance> sensors;
  {
    SensorConfig pc;
    pc.rate_hz = cfg.pose_rate_hz;
    pc.noise_std = Vec(3);
    pc.noise_std << cfg.pose_noise_xy, cfg.pose_noise_xy, cfg.pose_noise_psi;
    pc.latency = cfg.pose_latency;
    pc.seed = cfg.seed * 7919 + 1;
    sensors.emplace_back(MeasurementKind::Pose, pc, params);
    if (cfg.imu_enabled && cfg.plant_model == ModelType::Dynamic) {
      SensorConfig ic;
      ic.rate_hz = cfg.imu_rate_hz;
      ic.noise_std = Vec::Constant(3, cfg.imu_noise);
      ic.latency = cfg.imu_latency;
      ic.seed = cfg.seed * 7919 + 2;
      sensors.emplace_back(MeasurementKind::Imu, ic, params);
    }
  }

  const Vec x0_dyn = plant.state();
  Vec x0_model;
  if (cfg.plant_model == ModelType::Dynamic) {
    x0_model = x0_dyn;
  } else {
    x0_model = x0_dyn.head(4);
  }

  std::unique_ptr<Controller> controller = make_controller(cfg, track, params);
  std::unique_ptr<SafetyFilter> filter;
  if (cfg.safety == SafetyKind::Predictive) {
    SafetyConfig sc;
    sc.N = cfg.safety_n;
    sc.v_safe = cfg.safety_v_safe;
    sc.model = cfg.plant_model;
    filter = std::make_unique<SafetyFilter>(track, sc, params);
  }

  std::unique_ptr<VelocityEstimator> ve;
  std::unique_ptr<Ekf> ekf;
  if (cfg.estimator == EstimatorKind::Velocity) {
    ve = std::make_unique<VelocityEstimator>(cfg.pose_rate_hz, cfg.est_cutoff_hz);
  } else if (cfg.estimator == EstimatorKind::Ekf) {
    EkfConfig ec = EkfConfig::defaults(cfg.plant_model, params);
    ekf = std::make_unique<Ekf>(ec, x0_model, Mat::Identity(x0_model.size(), x0_model.size()) * 1e-4);
  }

  EpisodeLog log;
  std::vector<Measurement> inbox;  // sampled, waiting out their latency
  Estimate est;
  est.x = x0_model;
  est.layout = cfg.plant_model;
  est.source = EstimateSource::FullState;
  bool have_est = false;

  Vec2 u_prev(0, 0);
  double s_prev = track.project({x0_dyn(0), x0_dyn(1)}, x0_dyn(2)).s_star;
  double lap_start_t = 0;
  LapStats current;
  current.index = 0;

  auto sample_due = [&](double t_now, const Vec& xd) {
    for (SensorInstance& s : sensors) {
      while (s.next_due() <= t_now + 1e-9) {
        inbox.push_back(s.sample(xd, u_prev, s.next_due()));
      }
    }
  };
  sample_due(0.0, x0_dyn);

  for (int k = 0; k < max_ticks; ++k) {
    const double t_k = k * T;

    // deliver measurements whose latency has elapsed, oldest first
    std::stable_sort(inbox.begin(), inbox.end(),
                     [](const Measurement& a, const Measurement& b) { return a.stamp < b.stamp; });
    std::vector<Measurement> keep;
    for (const Measurement& m : inbox) {
      const double latency =
          m.kind == MeasurementKind::Pose ? cfg.pose_latency : cfg.imu_latency;
      if (m.stamp + latency <= t_k + 1e-9) {
        if (ve && m.kind == MeasurementKind::Pose) {
          est = ve->step(m);
          have_est = true;
        } else if (ekf) {
          ekf->process(m, u_prev);
        }
      } else {
        keep.push_back(m);
      }
    }
    inbox.swap(keep);

    const Vec x_true = plant.state();
    if (!x_true.allFinite()) {
      log.aborted = true;
      log.abort_reason = "plant state non-finite";
      break;
    }

    if (ekf) {
      const double ahead = t_k - ekf->stamp();
      if (ahead > 1e-9) ekf->predict(u_prev, ahead);
      est = ekf->estimate();
      have_est = true;
    } else if (cfg.estimator == EstimatorKind::FullState) {
      est.x = cfg.plant_model == ModelType::Dynamic ? x_true : Vec(x_true.head(4));
      est.stamp = t_k;
      est.layout = cfg.plant_model;
      est.source = EstimateSource::FullState;
      have_est = true;
    }
    if (!have_est) est.stamp = t_k;  // pre-first-measurement: initial-state prior

    const ControlInput u_d = controller->step(est, T);
    ControlInput u = u_d;
    FilterStatus fstatus = FilterStatus::PassThrough;
    double intervention = 0;
    if (filter) {
      const FilterDecision d =
          filter->filter_input(u_d, est, ControlInput::from(u_prev), T);
      u = d.u;
      fstatus = d.status;
      intervention = d.intervention;
    }
    (void)intervention;

    LogRow row;
    row.t = t_k;
    row.x_true = x_true;
    row.x_est = est.as_dynamic();
    row.u_d = u_d.vec();
    row.u = u.vec();
    row.filter_status = fstatus;
    row.degraded = controller->degraded();
    if (cfg.controller == ControllerKind::TrackingMpc || cfg.controller == ControllerKind::Mpcc) {
      const OcpSolution& sol = cfg.controller == ControllerKind::TrackingMpc
                                   ? static_cast<TrackingMpc*>(controller.get())->last_solution()
                                   : static_cast<Mpcc*>(controller.get())->last_solution();
      row.solver_status = sol.status;
      row.solver_iters = sol.iterations;
      row.solver_kkt = sol.kkt_residual;
    }
    const PathProjection pr = track.project({x_true(0), x_true(1)}, x_true(2), s_prev);
    row.s = pr.s_star;
    row.e_lat = pr.e_lat;
    log.rows.push_back(row);

    // advance the plant one controller period, sampling sensors mid-tick
    try {
      plant.apply(u.vec(), T, sample_due);
    } catch (const std::exception& ex) {
      log.aborted = true;
      log.abort_reason = std::string("plant diverged: ") + ex.what();
      break;
    }
    u_prev = u.vec();

    const Vec x_new = plant.state();
    if (!x_new.allFinite()) {
      log.aborted = true;
      log.abort_reason = "plant state non-finite";
      break;
    }
    const double t_next = (k + 1) * T;
    const PathProjection pr_new = track.project({x_new(0), x_new(1)}, x_new(2), pr.s_star);
    current.max_speed = std::max(current.max_speed, x_new(3));
    current.max_yaw_rate = std::max(current.max_yaw_rate, std::abs(x_new(5)));
    const double hw = track.half_width_at(pr_new.s_star);
    if (std::abs(pr_new.e_lat) > hw) ++current.violations;
    if (track.closed() && pr_new.s_star < s_prev - 0.5 * track.total_length() &&
        std::abs(pr_new.e_lat) <= hw) {
      current.time_s = t_next - lap_start_t;
      log.laps.push_back(current);
      lap_start_t = t_next;
      const int next_index = current.index + 1;
      current = LapStats{};
      current.index = next_index;
      if (cfg.lap_target > 0 && static_cast<int>(log.laps.size()) >= cfg.lap_target) break;
    }
    s_prev = pr_new.s_star;
  }
  return log;
}

EpisodeLog run_episode(const PipelineConfig& cfg) {
  cfg.validate();
  const Track track = Track::load(cfg.track_file);
  const ModelParams params =
      cfg.params_file.empty() ? ModelParams{} : ModelParams::load(cfg.params_file);
  const TrackRef r = track.ref_at(track.normalize_s(cfg.start_s));
  const Eigen::Vector2d n(-std::sin(r.tangent_angle), std::cos(r.tangent_angle));
  Vec x0;
  if (cfg.plant_model == ModelType::Dynamic) {
    x0 = Vec::Zero(6);
  } else {
    x0 = Vec::Zero(4);
  }
  x0(0) = r.point.x() + cfg.start_e_lat * n.x();
  x0(1) = r.point.y() + cfg.start_e_lat * n.y();
  x0(2) = r.tangent_angle;
  x0(3) = cfg.start_v;
  SimPlant plant(cfg.plant_model, params, cfg.plant_dt, x0);
  return run_episode(cfg, plant);
}

}  // namespace crs
