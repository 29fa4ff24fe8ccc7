#include "crs/safety.hpp"

#include <cmath>

namespace crs {

namespace {

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

std::string to_string(FilterStatus s) {
  switch (s) {
    case FilterStatus::PassThrough: return "pass_through";
    case FilterStatus::Filtered: return "filtered";
    case FilterStatus::Backup: return "backup";
    case FilterStatus::Emergency: return "emergency";
  }
  return "unknown";
}

void SafetyConfig::validate() const {
  if (N < 1) throw std::invalid_argument("safety: horizon must be at least 1");
  if (R.minCoeff() < 0 || Delta_R.minCoeff() < 0)
    throw std::invalid_argument("safety: weights must be PSD");
  if (!(v_safe > 0)) throw std::invalid_argument("safety: v_safe must be > 0");
  if ((u_hi - u_lo).minCoeff() < 0) throw std::invalid_argument("safety: empty input box");
}

SafetyFilter::SafetyFilter(const Track& track, SafetyConfig cfg, ModelParams params)
    : track_(&track), cfg_(std::move(cfg)), model_(cfg_.model, std::move(params)) {
  cfg_.validate();
}

void SafetyFilter::reset() {
  backup_.clear();
  have_last_ = false;
  s_hint_.reset();
}

OcpProblem SafetyFilter::build_problem(const Vec& xb, const ControlInput& u_d,
                                       const ControlInput& u_prev, double dt) const {
  const int nb = model_.nx();
  const int nz = nb + 2;  // state plus the previously applied input

  OcpProblem p;
  p.N = cfg_.N;
  p.nx = nz;
  p.nu = 2;
  p.x0 = Vec(nz);
  p.x0 << xb, u_prev.vec();

  p.dynamics = [this, dt, nb](const Vec& z, const Vec& u, int) {
    Vec out(nb + 2);
    out.head(nb) = model_.step_rk4(z.head(nb), Vec2(u(0), u(1)), dt);
    out.tail(2) = u;
    return out;
  };
  p.dynamics_jac = [this, dt, nb](const Vec& z, const Vec& u, int, Mat& fx, Mat& fu) {
    Mat A, B;
    model_.step_jacobians(z.head(nb), Vec2(u(0), u(1)), dt, A, B);
    fx = Mat::Zero(nb + 2, nb + 2);
    fx.topLeftCorner(nb, nb) = A;
    fu = Mat::Zero(nb + 2, 2);
    fu.topLeftCorner(nb, 2) = B;
    fu.bottomRows(2).setIdentity();
  };

  const Mat Rm = Mat(Vec(cfg_.R).asDiagonal());
  const Mat Dm = Mat(Vec(cfg_.Delta_R).asDiagonal());
  const Vec2 ud = u_d.vec();
  p.stage_cost = [this, Rm, Dm, ud, nb](const Vec& z, const Vec& u, int i) {
    StageQuad s;
    s.qx = Vec::Zero(nb + 2);
    s.Qxx = Mat::Zero(nb + 2, nb + 2);
    s.Qux = Mat::Zero(2, nb + 2);
    // rate term against the previous input carried in the state tail
    const Vec2 du = Vec2(u) - Vec2(z.tail(2));
    s.cost = 0.5 * du.dot(Dm * du);
    s.qu = Dm * du;
    s.qx.tail(2) = -Dm * du;
    s.Quu = Dm;
    s.Qxx.bottomRightCorner(2, 2) = Dm;
    s.Qux.rightCols(2) = -Dm;
    if (i == 0) {
      const Vec2 e = Vec2(u) - ud;
      s.cost += 0.5 * e.dot(Rm * e);
      s.qu += Rm * e;
      s.Quu += Rm;
    }
    return s;
  };
  p.terminal_cost = [nb](const Vec&) {
    StageQuad s;
    s.cost = 0;
    s.qx = Vec::Zero(nb + 2);
    s.Qxx = Mat::Zero(nb + 2, nb + 2);
    return s;
  };

  // the projection hint is threaded stage to stage; scans run i = 0..N
  auto project = [this](const Vec& z, int i) {
    const PathProjection pr = track_->project(
        Eigen::Vector2d(z(0), z(1)), z(2),
        i == 0 ? s_hint_ : std::optional<double>(chain_hint_));
    chain_hint_ = pr.s_star;
    return pr;
  };

  p.stage_ineq = [this, project](const Vec& z, int i) {
    const PathProjection pr = project(z, i);
    const double lim = track_->half_width_at(pr.s_star) - cfg_.vehicle_margin;
    Vec g(2);
    g << pr.e_lat - lim, -pr.e_lat - lim;
    return g;
  };
  p.stage_ineq_jac = [this, project, nb](const Vec& z, int i) {
    const PathProjection pr = project(z, i);
    Vec row = Vec::Zero(nb + 2);
    row(0) = -std::sin(pr.tangent_angle);
    row(1) = std::cos(pr.tangent_angle);
    Mat J(2, nb + 2);
    J.row(0) = row.transpose();
    J.row(1) = -row.transpose();
    return J;
  };
  p.terminal_ineq = [this, project](const Vec& z) {
    const PathProjection pr = project(z, 1);
    const double lim = track_->half_width_at(pr.s_star) - cfg_.vehicle_margin;
    Vec g(5);
    g << pr.e_lat - lim, -pr.e_lat - lim, z(3) - cfg_.v_safe, pr.alpha_e - cfg_.alpha_safe,
        -pr.alpha_e - cfg_.alpha_safe;
    return g;
  };
  p.terminal_ineq_jac = [this, project, nb](const Vec& z) {
    const PathProjection pr = project(z, 1);
    const double sphi = std::sin(pr.tangent_angle), cphi = std::cos(pr.tangent_angle);
    Mat J = Mat::Zero(5, nb + 2);
    J(0, 0) = -sphi;
    J(0, 1) = cphi;
    J.row(1) = -J.row(0);
    J(2, 3) = 1.0;
    // alpha_e = psi - phi(s*); the projection point slides with position
    const double denom = 1.0 - pr.kappa_at * pr.e_lat;
    const double slide = std::abs(denom) > 1e-6 ? pr.kappa_at / denom : 0.0;
    J(3, 0) = -slide * cphi;
    J(3, 1) = -slide * sphi;
    J(3, 2) = 1.0;
    J.row(4) = -J.row(3);
    return J;
  };
  p.w_soft = cfg_.w_soft;
  p.u_lo = cfg_.u_lo;
  p.u_hi = cfg_.u_hi;
  return p;
}

double SafetyFilter::plan_violation(const OcpProblem& p, const std::vector<Vec>& xs) const {
  double worst = 0;
  for (int i = 0; i < p.N; ++i) worst = std::max(worst, p.stage_ineq(xs[i], i).maxCoeff());
  worst = std::max(worst, p.terminal_ineq(xs[p.N]).maxCoeff());
  return worst;
}

FilterDecision SafetyFilter::filter_input(const ControlInput& u_d, const Estimate& est,
                                          const ControlInput& u_prev, double dt) {
  if (!cfg_.enabled) return {u_d, FilterStatus::PassThrough, 0.0};

  const Vec d = est.as_dynamic();
  Vec xb;
  if (cfg_.model == ModelType::Dynamic) {
    xb = d;
  } else {
    xb = Vec(4);
    xb << d(0), d(1), d(2), d(3);
  }

  // full brake while moving (or when the estimate is unusable), standstill
  // otherwise; a negative command at rest would drive the car backwards
  const bool moving = !xb.allFinite() || xb(3) > 0.05;
  const ControlInput brake{0.0, moving ? clamp(-1.0, cfg_.u_lo(1), cfg_.u_hi(1)) : 0.0};
  const Vec2 coast(0.0, 0.0);

  FilterDecision out;
  bool solved_ok = false;
  if (xb.allFinite()) {
    const OcpProblem p = build_problem(xb, u_d, u_prev, dt);
    OcpSolution warm;
    if (!backup_.empty()) {
      // the remaining backup plan is the best available starting guess,
      // whether it came from the last solve or survives a failure streak
      warm.u_traj.assign(backup_.begin(), backup_.end());
      while (static_cast<int>(warm.u_traj.size()) < cfg_.N) warm.u_traj.push_back(Vec(coast));
    }
    // cold starts are rare and need the extra iterations; warm-started
    // ticks get by on a few
    SolveOptions opts = cfg_.solve;
    if (backup_.empty()) opts.max_iters = std::max(opts.max_iters, 40);
    const OcpSolution sol = solver_.solve(p, opts, backup_.empty() ? nullptr : &warm);
    if (sol.status != SolveStatus::Infeasible &&
        plan_violation(p, sol.x_traj) <= cfg_.viol_tol) {
      solved_ok = true;
      last_ = sol;
      have_last_ = true;
      s_hint_ = track_->project(Eigen::Vector2d(xb(0), xb(1)), xb(2), s_hint_).s_star;
      // the tail of the plan, shifted by one tick, is the next backup
      backup_.assign(sol.u_traj.begin() + 1, sol.u_traj.end());
      backup_.push_back(coast);
      out.u = ControlInput::from(Vec2(sol.u_traj[0](0), sol.u_traj[0](1)));
      out.intervention = (out.u.vec() - u_d.vec()).norm();
      out.status =
          out.intervention <= cfg_.pass_tol ? FilterStatus::PassThrough : FilterStatus::Filtered;
    }
  }
  if (solved_ok) return out;

  if (!backup_.empty()) {
    out.u = ControlInput::from(backup_.front());
    backup_.erase(backup_.begin());
    out.status = FilterStatus::Backup;
    out.intervention = (out.u.vec() - u_d.vec()).norm();
    have_last_ = false;  // the stale solution no longer matches the next tick
    return out;
  }

  out.u = brake;
  out.status = FilterStatus::Emergency;
  out.intervention = (out.u.vec() - u_d.vec()).norm();
  return out;
}

}  // namespace crs
