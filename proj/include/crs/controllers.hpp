#pragma once

#include <optional>

#include "crs/estimation.hpp"
#include "crs/ocp.hpp"
#include "crs/track.hpp"

namespace crs {

/// One PID channel with clamped integrator state.
struct PidChannel {
  double k_p = 0, k_i = 0, k_d = 0;
};

struct PidGains {
  PidChannel accel;  // drives the longitudinal command
  PidChannel steer;  // drives the steering command
  double integrator_limit = 1.0;
  Vec2 u_lo{-0.4, -1.0};
  Vec2 u_hi{0.4, 1.0};
  void validate() const;
};

/// Common controller shape: estimate in, desired input out. Controllers
/// carry their own state (integrators, warm starts); one step call at a
/// time per instance.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual ControlInput step(const Estimate& est, double dt) = 0;
  virtual void reset() = 0;
  /// True while the controller is coasting on a failed internal solve.
  virtual bool degraded() const { return false; }
};

/// Set-point tracking PID: distance error on the drive channel, bearing
/// error on the steering channel.
class TrackingPid : public Controller {
 public:
  TrackingPid(PidGains gains, const Vec2& setpoint);

  ControlInput step(const Estimate& est, double dt) override;
  void reset() override;
  void set_setpoint(const Vec2& sp) { setpoint_ = sp; }

 private:
  PidGains gains_;
  Vec2 setpoint_;
  double int_p_ = 0, int_psi_ = 0;
  std::optional<double> prev_ep_, prev_epsi_;
};

/// Centerline-following PID: steering from the lateral error predicted a
/// short look-ahead time out with the kinematic model, constant drive.
class PathPid : public Controller {
 public:
  PathPid(const Track& track, PidGains gains, ModelParams params, double drive_const,
          double lookahead_time = 0.1);

  ControlInput step(const Estimate& est, double dt) override;
  void reset() override;

 private:
  const Track* track_;
  PidGains gains_;
  ModelParams params_;
  double drive_const_;
  double lookahead_;
  double int_e_ = 0;
  std::optional<double> prev_e_;
  double prev_delta_ = 0;
  std::optional<double> s_hint_;
};

struct FfPidConfig {
  double k_ug = 0;            // under-steer gradient [s^2/m]
  double k_c = 1.5;           // lateral error gain
  double k_d = 0.02;          // yaw damping gain
  double x_la = 0.3;          // look-ahead distance [m]
  double a_target = 0.5;      // drive command on a straight
  double k_a = 0.12;          // curvature slow-down gain
  double lookahead_avg = 0.8; // window for the average curvature [m]
  Vec2 u_lo{-0.4, -1.0};
  Vec2 u_hi{0.4, 1.0};
  void validate() const;
};

/// Feed-forward steering from path curvature plus lateral feedback, with
/// curvature-based slow-down on the drive channel.
class FfPid : public Controller {
 public:
  FfPid(const Track& track, FfPidConfig cfg, ModelParams params);

  ControlInput step(const Estimate& est, double dt) override;
  void reset() override;

 private:
  const Track* track_;
  FfPidConfig cfg_;
  ModelParams params_;
  std::optional<double> s_hint_;
};

struct MpcConfig {
  int N = 30;
  ModelType model = ModelType::Dynamic;
  Vec Q;         // tracking state weights (diagonal, model-dim)
  Vec2 R{0.5, 0.5};
  Vec2 Q_mpcc{1.0, 5.0};  // weights on (eps_l, eps_c)
  double Q_adv = 1.0;     // progress reward
  Vec2 R_mpcc{0.4, 0.4};  // input weights for the contouring controller
  double R_vtheta = 0.05; // virtual progress-rate input weight
  Vec2 u_lo{-0.4, -1.0};
  Vec2 u_hi{0.4, 1.0};
  double v_max = 2.0;           // soft speed cap [m/s]
  double vehicle_margin = 0.04; // half of vehicle width [m]
  double v_theta_max = 3.0;     // progress rate cap [m/s]
  double w_soft = 1e4;
  SolveOptions solve{.max_iters = 12};
  void validate() const;
};

/// Reference trajectory tracking MPC around the shared solver.
class TrackingMpc : public Controller {
 public:
  TrackingMpc(MpcConfig cfg, ModelParams params);

  /// reference states (>= N+1) and inputs (>= N) the horizon slides over
  void set_reference(std::vector<Vec> x_ref, std::vector<Vec2> u_ref);

  ControlInput step(const Estimate& est, double dt) override;
  void reset() override;
  bool degraded() const override { return failed_ticks_ > 0; }
  int failed_ticks() const { return failed_ticks_; }
  const OcpSolution& last_solution() const { return last_; }

 private:
  MpcConfig cfg_;
  VehicleModel model_;
  std::vector<Vec> x_ref_;
  std::vector<Vec2> u_ref_;
  std::size_t ref_pos_ = 0;
  OcpSolution last_;
  bool have_last_ = false;
  ControlInput last_input_;
  int failed_ticks_ = 0;
  OcpSolver solver_;
};

/// Model predictive contouring control: progress along the centerline as
/// an augmented state with a virtual rate input, lag/contouring errors
/// linearized at the reference point, soft track-boundary constraints.
class Mpcc : public Controller {
 public:
  Mpcc(const Track& track, MpcConfig cfg, ModelParams params);

  ControlInput step(const Estimate& est, double dt) override;
  void reset() override;
  bool degraded() const override { return failed_ticks_ > 0; }
  int failed_ticks() const { return failed_ticks_; }
  const OcpSolution& last_solution() const { return last_; }

 private:
  const Track* track_;
  MpcConfig cfg_;
  VehicleModel model_;
  OcpSolution last_;
  bool have_last_ = false;
  ControlInput last_input_;
  int failed_ticks_ = 0;
  std::optional<double> s_hint_;
  OcpSolver solver_;
};

}  // namespace crs
