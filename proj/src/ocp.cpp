#include "crs/ocp.hpp"

#include <cmath>
#include <limits>

namespace crs {

namespace {

bool finite(const Vec& v) { return v.allFinite(); }

Vec clamp_box(const Vec& u, const Vec& lo, const Vec& hi) {
  Vec r = u;
  if (lo.size()) r = r.cwiseMax(lo);
  if (hi.size()) r = r.cwiseMin(hi);
  return r;
}

/// min 1/2 du'H du + q'du  s.t. lo <= du <= hi, projected-Newton style.
/// Returns du and the set of free coordinates so the caller can build the
/// feedback gain on the free subspace only.
struct BoxQpResult {
  Vec du;
  std::vector<int> free_idx;
  Eigen::LLT<Mat> llt_free;  // factorization of H restricted to free_idx
};

double quad_value(const Mat& H, const Vec& q, const Vec& du) {
  return 0.5 * du.dot(H * du) + q.dot(du);
}

BoxQpResult box_qp(const Mat& H, const Vec& q, const Vec& lo, const Vec& hi) {
  const int n = static_cast<int>(q.size());
  BoxQpResult res;
  if (!lo.size() && !hi.size()) {
    res.llt_free.compute(H);
    res.du = res.llt_free.solve(-q);
    res.free_idx.resize(n);
    for (int j = 0; j < n; ++j) res.free_idx[j] = j;
    return res;
  }
  Vec du = clamp_box(Vec::Zero(n), lo, hi);
  const double eps = 1e-12;
  for (int it = 0; it < 100; ++it) {
    const Vec g = q + H * du;
    res.free_idx.clear();
    for (int j = 0; j < n; ++j) {
      const bool at_lo = lo.size() && du(j) <= lo(j) + eps && g(j) > 0;
      const bool at_hi = hi.size() && du(j) >= hi(j) - eps && g(j) < 0;
      if (!at_lo && !at_hi) res.free_idx.push_back(j);
    }
    const int nf = static_cast<int>(res.free_idx.size());
    if (nf == 0) break;
    Mat Hf(nf, nf);
    Vec gf(nf);
    for (int a = 0; a < nf; ++a) {
      gf(a) = g(res.free_idx[a]);
      for (int b = 0; b < nf; ++b) Hf(a, b) = H(res.free_idx[a], res.free_idx[b]);
    }
    res.llt_free.compute(Hf);
    if (gf.lpNorm<Eigen::Infinity>() < 1e-11) break;
    const Vec step_f = res.llt_free.solve(-gf);
    Vec step = Vec::Zero(n);
    for (int a = 0; a < nf; ++a) step(res.free_idx[a]) = step_f(a);

    const double v0 = quad_value(H, q, du);
    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 20; ++ls, alpha *= 0.5) {
      const Vec cand = clamp_box(du + alpha * step, lo, hi);
      if (quad_value(H, q, cand) < v0 - 1e-16) {
        du = cand;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  res.du = du;
  return res;
}

struct BackwardPass {
  std::vector<Vec> k;
  std::vector<Mat> K;
  std::vector<Vec> vx;   // value gradient per stage, 0..N
  std::vector<Mat> vxx;  // value Hessian per stage, 0..N
  double kkt = 0;        // projected input stationarity residual
};

/// Riccati recursion with per-stage input boxes (on the step du, already
/// shifted by the caller). c_i is the affine defect of the linearized
/// dynamics; zero in single shooting.
BackwardPass backward_pass(int N, const std::vector<Mat>& A, const std::vector<Mat>& B,
                           const std::vector<Vec>& c, const std::vector<StageQuad>& quad,
                           const std::vector<Vec>& lo, const std::vector<Vec>& hi, double reg) {
  BackwardPass bp;
  bp.k.resize(N);
  bp.K.resize(N);
  bp.vx.resize(N + 1);
  bp.vxx.resize(N + 1);
  bp.vx[N] = quad[N].qx;
  bp.vxx[N] = quad[N].Qxx;
  for (int i = N - 1; i >= 0; --i) {
    const Vec vxc = bp.vx[i + 1] + bp.vxx[i + 1] * c[i];
    const Vec Qx = quad[i].qx + A[i].transpose() * vxc;
    const Vec Qu = quad[i].qu + B[i].transpose() * vxc;
    const Mat Qxx = quad[i].Qxx + A[i].transpose() * bp.vxx[i + 1] * A[i];
    Mat Quu = quad[i].Quu + B[i].transpose() * bp.vxx[i + 1] * B[i];
    Quu.diagonal().array() += reg;
    const Mat Qux = quad[i].Qux + B[i].transpose() * bp.vxx[i + 1] * A[i];

    // stationarity at du = 0 with the box taken into account; inputs a
    // hair inside a bound (line-search landing spots) count as active
    const double act = 1e-5;
    const int nu = static_cast<int>(Qu.size());
    for (int j = 0; j < nu; ++j) {
      double r = std::abs(Qu(j));
      if (lo[i].size() && std::abs(lo[i](j)) < act) r = std::max(0.0, -Qu(j));
      if (hi[i].size() && std::abs(hi[i](j)) < act) r = std::max(0.0, Qu(j));
      if (lo[i].size() && hi[i].size() && std::abs(hi[i](j) - lo[i](j)) < act) r = 0.0;
      bp.kkt = std::max(bp.kkt, r);
    }

    BoxQpResult qp = box_qp(Quu, Qu, lo[i], hi[i]);
    bp.k[i] = qp.du;
    Mat K = Mat::Zero(nu, A[i].cols());
    if (!qp.free_idx.empty()) {
      const int nf = static_cast<int>(qp.free_idx.size());
      Mat Qux_f(nf, Qux.cols());
      for (int a = 0; a < nf; ++a) Qux_f.row(a) = Qux.row(qp.free_idx[a]);
      const Mat Kf = -qp.llt_free.solve(Qux_f);
      for (int a = 0; a < nf; ++a) K.row(qp.free_idx[a]) = Kf.row(a);
    }
    bp.K[i] = K;

    bp.vx[i] = Qx + K.transpose() * (Quu * qp.du + Qu) + Qux.transpose() * qp.du;
    bp.vxx[i] = Qxx + K.transpose() * Quu * K + K.transpose() * Qux + Qux.transpose() * K;
    bp.vxx[i] = 0.5 * (bp.vxx[i] + bp.vxx[i].transpose()).eval();
  }
  return bp;
}

/// Soft quadratic penalties on state box and stage inequalities, added in
/// Gauss-Newton form to the cost quad of the given stage.
void add_soft_penalties(const OcpProblem& p, const Vec& x, int i, bool terminal, StageQuad& sq) {
  const double w = p.w_soft;
  auto add_scalar = [&](double viol, const Vec& grad) {
    if (viol <= 0) return;
    sq.cost += 0.5 * w * viol * viol;
    sq.qx += w * viol * grad;
    sq.Qxx += w * grad * grad.transpose();
  };
  if (p.x_lo.size())
    for (int j = 0; j < p.nx; ++j) add_scalar(p.x_lo(j) - x(j), -Vec::Unit(p.nx, j));
  if (p.x_hi.size())
    for (int j = 0; j < p.nx; ++j) add_scalar(x(j) - p.x_hi(j), Vec::Unit(p.nx, j));
  if (!terminal && p.stage_ineq) {
    const Vec g = p.stage_ineq(x, i);
    const Mat J = p.stage_ineq_jac(x, i);
    for (int j = 0; j < g.size(); ++j) add_scalar(g(j), J.row(j).transpose());
  }
  if (terminal && p.terminal_ineq) {
    const Vec g = p.terminal_ineq(x);
    const Mat J = p.terminal_ineq_jac(x);
    for (int j = 0; j < g.size(); ++j) add_scalar(g(j), J.row(j).transpose());
  }
}

double penalized_cost(const OcpProblem& p, const std::vector<Vec>& xs, const std::vector<Vec>& us) {
  double total = 0;
  for (int i = 0; i < p.N; ++i) {
    StageQuad sq = p.stage_cost(xs[i], us[i], i);
    add_soft_penalties(p, xs[i], i, false, sq);
    total += sq.cost;
  }
  StageQuad st = p.terminal_cost(xs[p.N]);
  add_soft_penalties(p, xs[p.N], p.N, true, st);
  return total + st.cost;
}

}  // namespace

void OcpProblem::validate() const {
  if (N < 1) throw std::invalid_argument("ocp: horizon must be at least 1");
  if (nx < 1 || nu < 1) throw std::invalid_argument("ocp: state/input dimensions missing");
  if (x0.size() != nx) throw std::invalid_argument("ocp: x0 dimension mismatch");
  if (!dynamics || !dynamics_jac || !stage_cost || !terminal_cost)
    throw std::invalid_argument("ocp: dynamics and cost callbacks are required");
  if (static_cast<bool>(stage_ineq) != static_cast<bool>(stage_ineq_jac))
    throw std::invalid_argument("ocp: stage inequality needs both value and Jacobian");
  if (static_cast<bool>(terminal_ineq) != static_cast<bool>(terminal_ineq_jac))
    throw std::invalid_argument("ocp: terminal inequality needs both value and Jacobian");
  if (u_lo.size() && u_hi.size() && (u_hi - u_lo).minCoeff() < 0)
    throw std::invalid_argument("ocp: empty input box");
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIter: return "max_iter";
    default: return "infeasible";
  }
}

QpSolution qp_solve(const QpData& qp) {
  if (qp.N < 1) throw std::invalid_argument("qp: horizon must be at least 1");
  std::vector<Vec> lo(qp.N, qp.u_lo), hi(qp.N, qp.u_hi);
  for (int i = 0; i < qp.N; ++i) {
    if (!qp.quad[i].Quu.allFinite() ||
        Eigen::LLT<Mat>((qp.quad[i].Quu +
                         Mat::Identity(qp.quad[i].Quu.rows(), qp.quad[i].Quu.cols()) * qp.reg))
                .info() != Eigen::Success)
      throw std::runtime_error("qp: stage Hessian not positive semidefinite");
  }
  BackwardPass bp = backward_pass(qp.N, qp.A, qp.B, qp.c, qp.quad, lo, hi, qp.reg);

  QpSolution sol;
  sol.dx.resize(qp.N + 1);
  sol.du.resize(qp.N);
  sol.lam.resize(qp.N + 1);
  sol.k = bp.k;
  sol.K = bp.K;
  sol.dx[0] = qp.dx0;
  for (int i = 0; i < qp.N; ++i) {
    Vec du = bp.k[i] + bp.K[i] * sol.dx[i];
    du = clamp_box(du, qp.u_lo, qp.u_hi);
    sol.du[i] = du;
    sol.dx[i + 1] = qp.A[i] * sol.dx[i] + qp.B[i] * du + qp.c[i];
  }
  for (int i = 0; i <= qp.N; ++i) sol.lam[i] = bp.vx[i] + bp.vxx[i] * sol.dx[i];
  double cost = 0;
  for (int i = 0; i < qp.N; ++i) {
    const StageQuad& q = qp.quad[i];
    cost += q.cost + q.qx.dot(sol.dx[i]) + q.qu.dot(sol.du[i]) +
            0.5 * sol.dx[i].dot(q.Qxx * sol.dx[i]) + sol.du[i].dot(q.Qux * sol.dx[i]) +
            0.5 * sol.du[i].dot(q.Quu * sol.du[i]);
  }
  cost += qp.quad[qp.N].cost + qp.quad[qp.N].qx.dot(sol.dx[qp.N]) +
          0.5 * sol.dx[qp.N].dot(qp.quad[qp.N].Qxx * sol.dx[qp.N]);
  sol.cost = cost;
  return sol;
}

OcpSolution OcpSolver::solve(const OcpProblem& p, const SolveOptions& opts,
                             const OcpSolution* warm_start) {
  p.validate();
  const int N = p.N;

  OcpSolution sol;
  sol.u_traj.assign(N, Vec::Zero(p.nu));
  if (warm_start && static_cast<int>(warm_start->u_traj.size()) == N)
    sol.u_traj = warm_start->u_traj;
  for (auto& u : sol.u_traj) u = clamp_box(u, p.u_lo, p.u_hi);

  // single-shooting rollout; dynamics defects are zero by construction
  auto rollout = [&](const std::vector<Vec>& us, std::vector<Vec>& xs) {
    xs.assign(N + 1, Vec());
    xs[0] = p.x0;
    for (int i = 0; i < N; ++i) {
      try {
        xs[i + 1] = p.dynamics(xs[i], us[i], i);
      } catch (const std::exception&) {
        return false;
      }
      if (!finite(xs[i + 1])) return false;
    }
    return true;
  };

  if (!rollout(sol.u_traj, sol.x_traj)) {
    sol.status = SolveStatus::Infeasible;
    return sol;
  }
  double cost = penalized_cost(p, sol.x_traj, sol.u_traj);

  std::vector<Mat> A(N), B(N);
  std::vector<Vec> c(N, Vec::Zero(p.nx)), lo(N), hi(N);
  std::vector<StageQuad> quad(N + 1);

  const int max_iters = opts.rti ? 1 : opts.max_iters;
  sol.status = SolveStatus::MaxIter;
  double reg = opts.reg;

  for (int iter = 1; iter <= max_iters; ++iter) {
    sol.iterations = iter;
    for (int i = 0; i < N; ++i) {
      p.dynamics_jac(sol.x_traj[i], sol.u_traj[i], i, A[i], B[i]);
      quad[i] = p.stage_cost(sol.x_traj[i], sol.u_traj[i], i);
      add_soft_penalties(p, sol.x_traj[i], i, false, quad[i]);
      lo[i] = p.u_lo.size() ? Vec(p.u_lo - sol.u_traj[i]) : Vec();
      hi[i] = p.u_hi.size() ? Vec(p.u_hi - sol.u_traj[i]) : Vec();
    }
    quad[N] = p.terminal_cost(sol.x_traj[N]);
    add_soft_penalties(p, sol.x_traj[N], N, true, quad[N]);

    BackwardPass bp = backward_pass(N, A, B, c, quad, lo, hi, reg);
    sol.kkt_residual = bp.kkt;
    if (opts.log)
      *opts.log << "iter " << iter << " cost " << format_double(cost) << " kkt "
                << format_double(bp.kkt) << "\n";
    if (bp.kkt <= opts.kkt_tol) {
      sol.status = SolveStatus::Converged;
      break;
    }

    bool accepted = false;
    static constexpr double kAlphas[] = {1.0,    0.5,    0.25,    0.125,   0.0625,  0.03125,
                                         0.0156, 0.0078, 0.0039, 0.00195, 0.00098, 0.00049};
    double alpha = 1.0;
    std::vector<Vec> us_new(N), xs_new;
    for (int ls = 0; ls < 12 && !accepted; ++ls) {
      alpha = kAlphas[ls];
      xs_new.assign(N + 1, Vec());
      xs_new[0] = p.x0;
      bool ok = true;
      for (int i = 0; i < N; ++i) {
        Vec u = sol.u_traj[i] + alpha * bp.k[i] + bp.K[i] * (xs_new[i] - sol.x_traj[i]);
        u = clamp_box(u, p.u_lo, p.u_hi);
        // snap onto a bound when a hair inside it, so active sets settle
        for (int j = 0; j < p.nu; ++j) {
          if (p.u_lo.size() && u(j) - p.u_lo(j) < 1e-6) u(j) = p.u_lo(j);
          if (p.u_hi.size() && p.u_hi(j) - u(j) < 1e-6) u(j) = p.u_hi(j);
        }
        us_new[i] = u;
        try {
          xs_new[i + 1] = p.dynamics(xs_new[i], us_new[i], i);
        } catch (const std::exception&) {
          ok = false;
          break;
        }
        if (!finite(xs_new[i + 1])) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      const double cost_new = penalized_cost(p, xs_new, us_new);
      if (std::isfinite(cost_new) && cost_new <= cost) {
        sol.u_traj = us_new;
        sol.x_traj = xs_new;
        cost = cost_new;
        accepted = true;
        reg = std::max(opts.reg, reg * 0.5);
      }
    }
    if (!accepted) {
      // steepen the regularization; give up once the model is heavily damped
      reg *= 10.0;
      if (reg > 1e8) break;
    }
  }

  sol.cost = cost;
  return sol;
}

}  // namespace crs
