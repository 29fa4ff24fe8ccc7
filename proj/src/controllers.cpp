#include "crs/controllers.hpp"

#include <cmath>
#include <limits>

namespace crs {

namespace {

constexpr double kGravity = 9.81;
constexpr double kInf = std::numeric_limits<double>::infinity();

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

/// One PID evaluation with clamped integrator and first-call derivative of
/// zero. The integrator is owned by the caller.
double pid_eval(const PidChannel& ch, double e, double dt, double& integ, double int_limit,
                std::optional<double>& prev_e) {
  integ = clamp(integ + e * dt, -int_limit, int_limit);
  const double de = prev_e ? (e - *prev_e) / dt : 0.0;
  prev_e = e;
  return ch.k_p * e + ch.k_i * integ + ch.k_d * de;
}

/// Model-layout state out of an estimate (kinematic speed = v_x).
Vec base_state(ModelType t, const Estimate& est) {
  Vec d = est.as_dynamic();
  if (t == ModelType::Dynamic) return d;
  Vec k(4);
  k << d(0), d(1), d(2), d(3);
  return k;
}

}  // namespace

void PidGains::validate() const {
  if (!(integrator_limit > 0)) throw std::invalid_argument("pid: integrator limit must be > 0");
  for (double v : {accel.k_p, accel.k_i, accel.k_d, steer.k_p, steer.k_i, steer.k_d})
    if (!std::isfinite(v)) throw std::invalid_argument("pid: gains must be finite");
  if ((u_hi - u_lo).minCoeff() < 0) throw std::invalid_argument("pid: empty output box");
}

void FfPidConfig::validate() const {
  if (!(x_la > 0)) throw std::invalid_argument("ffpid: look-ahead distance must be > 0");
  if (!(lookahead_avg > 0)) throw std::invalid_argument("ffpid: curvature window must be > 0");
}

void MpcConfig::validate() const {
  if (N < 1) throw std::invalid_argument("mpc: horizon must be at least 1");
  if (!(Q_adv > 0)) throw std::invalid_argument("mpc: progress reward must be > 0");
  if (Q.size() && Q.minCoeff() < 0) throw std::invalid_argument("mpc: Q must be PSD");
  if (R.minCoeff() < 0 || R_mpcc.minCoeff() < 0 || R_vtheta < 0)
    throw std::invalid_argument("mpc: R must be PSD");
}

TrackingPid::TrackingPid(PidGains gains, const Vec2& setpoint)
    : gains_(std::move(gains)), setpoint_(setpoint) {
  gains_.validate();
}

void TrackingPid::reset() {
  int_p_ = int_psi_ = 0;
  prev_ep_.reset();
  prev_epsi_.reset();
}

ControlInput TrackingPid::step(const Estimate& est, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("tracking pid: dt must be > 0");
  const Vec x = est.as_dynamic();
  const double e_x = setpoint_(0) - x(0);
  const double e_y = setpoint_(1) - x(1);
  const double e_p = std::hypot(e_x, e_y);
  // bearing is undefined on top of the set-point; hold the wheel straight
  const double e_psi = e_p < 1e-9 ? 0.0 : wrap_angle(std::atan2(e_y, e_x) - x(2));

  const double a = pid_eval(gains_.accel, e_p, dt, int_p_, gains_.integrator_limit, prev_ep_);
  const double d = pid_eval(gains_.steer, e_psi, dt, int_psi_, gains_.integrator_limit, prev_epsi_);
  return {clamp(d, gains_.u_lo(0), gains_.u_hi(0)), clamp(a, gains_.u_lo(1), gains_.u_hi(1))};
}

PathPid::PathPid(const Track& track, PidGains gains, ModelParams params, double drive_const,
                 double lookahead_time)
    : track_(&track),
      gains_(std::move(gains)),
      params_(std::move(params)),
      drive_const_(drive_const),
      lookahead_(lookahead_time) {
  gains_.validate();
  if (!(lookahead_ > 0)) throw std::invalid_argument("path pid: look-ahead time must be > 0");
}

void PathPid::reset() {
  int_e_ = 0;
  prev_e_.reset();
  prev_delta_ = 0;
  s_hint_.reset();
}

ControlInput PathPid::step(const Estimate& est, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("path pid: dt must be > 0");
  VehicleModel kin(ModelType::Kinematic, params_);
  const Vec xk = base_state(ModelType::Kinematic, est);
  // coast forward holding the previous steering angle, then measure how
  // far off the centerline that prediction lands
  const Vec pred = kin.step_rk4(xk, Vec2(prev_delta_, 0.0), lookahead_);
  const PathProjection proj =
      track_->project(Eigen::Vector2d(pred(0), pred(1)), pred(2), s_hint_);
  s_hint_ = proj.s_star;

  const double e_l = proj.e_lat;
  const double d =
      -pid_eval(gains_.steer, e_l, dt, int_e_, gains_.integrator_limit, prev_e_);
  const double d_sat = clamp(d, gains_.u_lo(0), gains_.u_hi(0));
  prev_delta_ = d_sat;
  return {d_sat, clamp(drive_const_, gains_.u_lo(1), gains_.u_hi(1))};
}

FfPid::FfPid(const Track& track, FfPidConfig cfg, ModelParams params)
    : track_(&track), cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
}

void FfPid::reset() { s_hint_.reset(); }

ControlInput FfPid::step(const Estimate& est, double) {
  const Vec x = est.as_dynamic();
  const PathProjection proj =
      track_->project(Eigen::Vector2d(x(0), x(1)), x(2), s_hint_);
  s_hint_ = proj.s_star;

  const double v_x = x(3);
  const double omega = x(5);
  const double kappa = proj.kappa_at;

  const double d_ff = (params_.l_f + params_.l_r + cfg_.k_ug * v_x * v_x / kGravity) * kappa;
  const double d_control = -cfg_.k_c * (proj.e_lat + cfg_.x_la * std::sin(proj.alpha_e));
  const double d_damping = -cfg_.k_d * (omega - v_x * kappa * std::cos(proj.alpha_e));

  const double kbar = track_->avg_curvature(proj.s_star, cfg_.lookahead_avg);
  const double a = cfg_.a_target - cfg_.k_a * kbar * v_x * v_x;

  return {clamp(d_ff + d_control + d_damping, cfg_.u_lo(0), cfg_.u_hi(0)),
          clamp(a, cfg_.u_lo(1), cfg_.u_hi(1))};
}

TrackingMpc::TrackingMpc(MpcConfig cfg, ModelParams params)
    : cfg_(std::move(cfg)), model_(cfg_.model, std::move(params)) {
  cfg_.validate();
  if (cfg_.Q.size() == 0) cfg_.Q = Vec::Ones(model_.nx());
  if (cfg_.Q.size() != model_.nx())
    throw std::invalid_argument("mpc: Q dimension does not match the model");
}

void TrackingMpc::set_reference(std::vector<Vec> x_ref, std::vector<Vec2> u_ref) {
  if (static_cast<int>(x_ref.size()) < cfg_.N + 1 ||
      static_cast<int>(u_ref.size()) < cfg_.N)
    throw std::invalid_argument("mpc: reference shorter than the horizon");
  x_ref_ = std::move(x_ref);
  u_ref_ = std::move(u_ref);
  ref_pos_ = 0;
}

void TrackingMpc::reset() {
  have_last_ = false;
  failed_ticks_ = 0;
  ref_pos_ = 0;
  last_input_ = {};
}

ControlInput TrackingMpc::step(const Estimate& est, double dt) {
  if (x_ref_.empty()) throw std::logic_error("mpc: no reference set");
  const int N = cfg_.N;
  // slide the horizon window, holding the final reference sample at the end
  auto xr = [&](int i) {
    const std::size_t idx = std::min(ref_pos_ + i, x_ref_.size() - 1);
    return x_ref_[idx];
  };
  auto ur = [&](int i) {
    const std::size_t idx = std::min(ref_pos_ + i, u_ref_.size() - 1);
    return u_ref_[idx];
  };

  OcpProblem p;
  p.N = N;
  p.nx = model_.nx();
  p.nu = 2;
  p.x0 = base_state(cfg_.model, est);
  p.dynamics = [this, dt](const Vec& x, const Vec& u, int) {
    return model_.step_rk4(x, Vec2(u(0), u(1)), dt);
  };
  p.dynamics_jac = [this, dt](const Vec& x, const Vec& u, int, Mat& fx, Mat& fu) {
    model_.step_jacobians(x, Vec2(u(0), u(1)), dt, fx, fu);
  };
  const Mat Qm = Mat(cfg_.Q.asDiagonal());
  const Mat Rm = Mat(Vec(cfg_.R).asDiagonal());
  p.stage_cost = [this, Qm, Rm, xr, ur](const Vec& x, const Vec& u, int i) {
    StageQuad s;
    const Vec ex = x - xr(i);
    const Vec eu = u - Vec(ur(i));
    s.cost = 0.5 * ex.dot(Qm * ex) + 0.5 * eu.dot(Rm * eu);
    s.qx = Qm * ex;
    s.qu = Rm * eu;
    s.Qxx = Qm;
    s.Quu = Rm;
    s.Qux = Mat::Zero(2, Qm.rows());
    return s;
  };
  p.terminal_cost = [this, Qm, xr, N](const Vec& x) {
    StageQuad s;
    const Vec ex = x - xr(N);
    s.cost = 0.5 * ex.dot(Qm * ex);
    s.qx = Qm * ex;
    s.Qxx = Qm;
    return s;
  };
  p.u_lo = cfg_.u_lo;
  p.u_hi = cfg_.u_hi;

  OcpSolution warm;
  if (have_last_) {
    warm = last_;
    warm.u_traj.erase(warm.u_traj.begin());
    warm.u_traj.push_back(warm.u_traj.back());
  }
  const OcpSolution sol = solver_.solve(p, cfg_.solve, have_last_ ? &warm : nullptr);
  ++ref_pos_;
  if (sol.status == SolveStatus::Infeasible) {
    ++failed_ticks_;
    return last_input_;
  }
  last_ = sol;
  have_last_ = true;
  failed_ticks_ = 0;
  last_input_ = ControlInput::from(Vec2(sol.u_traj[0](0), sol.u_traj[0](1)));
  return last_input_;
}

Mpcc::Mpcc(const Track& track, MpcConfig cfg, ModelParams params)
    : track_(&track), cfg_(std::move(cfg)), model_(cfg_.model, std::move(params)) {
  cfg_.validate();
}

void Mpcc::reset() {
  have_last_ = false;
  failed_ticks_ = 0;
  last_input_ = {};
  s_hint_.reset();
}

ControlInput Mpcc::step(const Estimate& est, double dt) {
  const int N = cfg_.N;
  const int nb = model_.nx();  // base model states; progress is appended
  const Vec xb = base_state(cfg_.model, est);
  const PathProjection proj =
      track_->project(Eigen::Vector2d(xb(0), xb(1)), xb(2), s_hint_);
  s_hint_ = proj.s_star;

  OcpProblem p;
  p.N = N;
  p.nx = nb + 1;
  p.nu = 3;  // steering, drive, virtual progress rate
  p.x0 = Vec(nb + 1);
  p.x0 << xb, proj.s_star;
  p.dynamics = [this, dt, nb](const Vec& x, const Vec& u, int) {
    Vec out(nb + 1);
    out.head(nb) = model_.step_rk4(x.head(nb), Vec2(u(0), u(1)), dt);
    out(nb) = x(nb) + u(2) * dt;
    return out;
  };
  p.dynamics_jac = [this, dt, nb](const Vec& x, const Vec& u, int, Mat& fx, Mat& fu) {
    Mat A, B;
    model_.step_jacobians(x.head(nb), Vec2(u(0), u(1)), dt, A, B);
    fx = Mat::Zero(nb + 1, nb + 1);
    fx.topLeftCorner(nb, nb) = A;
    fx(nb, nb) = 1.0;
    fu = Mat::Zero(nb + 1, 3);
    fu.topLeftCorner(nb, 2) = B;
    fu(nb, 2) = dt;
  };

  // Gauss-Newton quad of the contouring cost at one augmented state
  auto contour_quad = [this, nb](const Vec& x) {
    StageQuad s;
    const double theta = x(nb);
    const Eigen::Vector2d pos(x(0), x(1));
    const auto [el, ec] = track_->contouring_errors(pos, theta);
    const TrackRef ref = track_->ref_at(track_->normalize_s(theta));
    const double cphi = std::cos(ref.tangent_angle), sphi = std::sin(ref.tangent_angle);
    // rows of the residual Jacobian over (x_p, y_p, theta)
    Mat J = Mat::Zero(2, nb + 1);
    J(0, 0) = cphi;
    J(0, 1) = sphi;
    J(0, nb) = -1.0 + ref.kappa * ec;
    J(1, 0) = -sphi;
    J(1, 1) = cphi;
    J(1, nb) = -ref.kappa * el;
    const Vec2 r(el, ec);
    const Mat W = Mat(Vec(cfg_.Q_mpcc).asDiagonal());
    s.cost = 0.5 * r.dot(W * r) - cfg_.Q_adv * theta;
    s.qx = J.transpose() * (W * r);
    s.qx(nb) -= cfg_.Q_adv;
    s.Qxx = J.transpose() * W * J;
    return s;
  };
  p.stage_cost = [this, contour_quad](const Vec& x, const Vec& u, int) {
    StageQuad s = contour_quad(x);
    Vec rd(3);
    rd << cfg_.R_mpcc(0), cfg_.R_mpcc(1), cfg_.R_vtheta;
    s.cost += 0.5 * u.dot(rd.asDiagonal() * u);
    s.qu = rd.asDiagonal() * u;
    s.Quu = Mat(rd.asDiagonal());
    s.Qux = Mat::Zero(3, x.size());
    return s;
  };
  p.terminal_cost = contour_quad;

  // corridor |eps_c| <= half_width - margin, softened by the solver
  p.stage_ineq = [this, nb](const Vec& x, int) {
    const double theta = track_->normalize_s(x(nb));
    const auto [el, ec] = track_->contouring_errors(Eigen::Vector2d(x(0), x(1)), theta);
    (void)el;
    const double lim = track_->half_width_at(theta) - cfg_.vehicle_margin;
    Vec g(2);
    g << ec - lim, -ec - lim;
    return g;
  };
  p.stage_ineq_jac = [this, nb](const Vec& x, int) {
    const double theta = track_->normalize_s(x(nb));
    const auto [el, ec] = track_->contouring_errors(Eigen::Vector2d(x(0), x(1)), theta);
    const TrackRef ref = track_->ref_at(theta);
    Vec row(nb + 1);
    row.setZero();
    row(0) = -std::sin(ref.tangent_angle);
    row(1) = std::cos(ref.tangent_angle);
    row(nb) = -ref.kappa * el;
    (void)ec;
    Mat J(2, nb + 1);
    J.row(0) = row.transpose();
    J.row(1) = -row.transpose();
    return J;
  };
  p.terminal_ineq = [&p](const Vec& x) { return p.stage_ineq(x, 0); };
  p.terminal_ineq_jac = [&p](const Vec& x) { return p.stage_ineq_jac(x, 0); };
  p.w_soft = cfg_.w_soft;

  p.u_lo = Vec(3);
  p.u_lo << cfg_.u_lo(0), cfg_.u_lo(1), 0.0;  // progress never runs backwards
  p.u_hi = Vec(3);
  p.u_hi << cfg_.u_hi(0), cfg_.u_hi(1), cfg_.v_theta_max;

  p.x_hi = Vec::Constant(nb + 1, kInf);
  p.x_hi(3) = cfg_.v_max;  // soft speed cap (v resp. v_x)

  OcpSolution warm;
  if (have_last_) {
    warm = last_;
    warm.u_traj.erase(warm.u_traj.begin());
    warm.u_traj.push_back(warm.u_traj.back());
  }
  const OcpSolution sol = solver_.solve(p, cfg_.solve, have_last_ ? &warm : nullptr);
  if (sol.status == SolveStatus::Infeasible) {
    ++failed_ticks_;
    return last_input_;
  }
  last_ = sol;
  have_last_ = true;
  failed_ticks_ = 0;
  last_input_ = ControlInput::from(Vec2(sol.u_traj[0](0), sol.u_traj[0](1)));
  return last_input_;
}

}  // namespace crs
