#include "crs/ocp.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"

using namespace crs;

namespace {

// quadratic tracking problem: linear dynamics, cost 1/2|x|_Q^2 + 1/2|u|_R^2
OcpProblem make_lqr(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& QN,
                    const Vec& x0, int N) {
  OcpProblem p;
  p.N = N;
  p.nx = static_cast<int>(A.rows());
  p.nu = static_cast<int>(B.cols());
  p.x0 = x0;
  p.dynamics = [A, B](const Vec& x, const Vec& u, int) { return Vec(A * x + B * u); };
  p.dynamics_jac = [A, B](const Vec&, const Vec&, int, Mat& fx, Mat& fu) {
    fx = A;
    fu = B;
  };
  p.stage_cost = [Q, R](const Vec& x, const Vec& u, int) {
    StageQuad s;
    s.cost = 0.5 * x.dot(Q * x) + 0.5 * u.dot(R * u);
    s.qx = Q * x;
    s.qu = R * u;
    s.Qxx = Q;
    s.Quu = R;
    s.Qux = Mat::Zero(R.rows(), Q.rows());
    return s;
  };
  p.terminal_cost = [QN](const Vec& x) {
    StageQuad s;
    s.cost = 0.5 * x.dot(QN * x);
    s.qx = QN * x;
    s.Qxx = QN;
    return s;
  };
  return p;
}

// finite-horizon Riccati recursion, written without reference to the solver
void lqr_oracle(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& QN,
                const Vec& x0, int N, std::vector<Vec>& xs, std::vector<Vec>& us) {
  std::vector<Mat> K(N);
  Mat P = QN;
  for (int i = N - 1; i >= 0; --i) {
    K[i] = (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
    P = Q + A.transpose() * P * (A - B * K[i]);
    P = 0.5 * (P + P.transpose()).eval();
  }
  xs.assign(N + 1, Vec());
  us.assign(N, Vec());
  xs[0] = x0;
  for (int i = 0; i < N; ++i) {
    us[i] = -K[i] * xs[i];
    xs[i + 1] = A * xs[i] + B * us[i];
  }
}

Mat random_psd(int n, std::mt19937_64& rng, double ridge) {
  std::normal_distribution<double> N01(0.0, 1.0);
  Mat M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = N01(rng);
  return M.transpose() * M + ridge * Mat::Identity(n, n);
}

}  // namespace

TEST_CASE("unconstrained lqr matches riccati recursion") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> N01(0.0, 1.0);
  const int nx = 4, nu = 2, N = 25;
  Mat A(nx, nx), B(nx, nu);
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < nx; ++j) A(i, j) = 0.3 * N01(rng);
    for (int j = 0; j < nu; ++j) B(i, j) = N01(rng);
  }
  A += Mat::Identity(nx, nx);
  const Mat Q = random_psd(nx, rng, 0.1);
  const Mat R = random_psd(nu, rng, 0.5);
  const Mat QN = random_psd(nx, rng, 1.0);
  Vec x0(nx);
  x0 << 1.0, -0.5, 0.3, 2.0;

  OcpProblem p = make_lqr(A, B, Q, R, QN, x0, N);
  OcpSolution sol = OcpSolver().solve(p);
  CHECK(sol.status == SolveStatus::Converged);

  std::vector<Vec> xs, us;
  lqr_oracle(A, B, Q, R, QN, x0, N, xs, us);
  for (int i = 0; i < N; ++i)
    CHECK((sol.u_traj[i] - us[i]).lpNorm<Eigen::Infinity>() < 1e-8);
  for (int i = 0; i <= N; ++i)
    CHECK((sol.x_traj[i] - xs[i]).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("optimal start converges in one iteration with zero step") {
  std::mt19937_64 rng(6);
  const Mat A = Mat::Identity(3, 3) * 0.9;
  const Mat B = Mat::Identity(3, 3);
  const Mat Q = random_psd(3, rng, 0.2);
  const Mat R = random_psd(3, rng, 0.2);
  OcpProblem p = make_lqr(A, B, Q, R, Q, Vec::Zero(3), 10);
  OcpSolution sol = OcpSolver().solve(p);
  CHECK(sol.status == SolveStatus::Converged);
  CHECK(sol.iterations == 1);
  for (const Vec& u : sol.u_traj) CHECK(u.lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(sol.cost == 0.0);
}

TEST_CASE("double integrator with input bounds goes bang-bang") {
  const int N = 20;
  const double dt = 0.1;
  Mat A(2, 2), B(2, 1);
  A << 1, dt, 0, 1;
  B << 0.5 * dt * dt, dt;
  const double target = 10.0;  // unreachable within the horizon at |u| <= 1
  const double ru = 1e-6;

  OcpProblem p;
  p.N = N;
  p.nx = 2;
  p.nu = 1;
  p.x0 = Vec::Zero(2);
  p.dynamics = [A, B](const Vec& x, const Vec& u, int) { return Vec(A * x + B * u); };
  p.dynamics_jac = [A, B](const Vec&, const Vec&, int, Mat& fx, Mat& fu) {
    fx = A;
    fu = B;
  };
  p.stage_cost = [ru](const Vec&, const Vec& u, int) {
    StageQuad s;
    s.cost = 0.5 * ru * u.squaredNorm();
    s.qx = Vec::Zero(2);
    s.qu = ru * u;
    s.Qxx = Mat::Zero(2, 2);
    s.Quu = Mat::Identity(1, 1) * ru;
    s.Qux = Mat::Zero(1, 2);
    return s;
  };
  p.terminal_cost = [target](const Vec& x) {
    StageQuad s;
    const Vec e = x - (Vec(2) << target, 0.0).finished();
    s.cost = 50.0 * e.squaredNorm();
    s.qx = 100.0 * e;
    s.Qxx = 100.0 * Mat::Identity(2, 2);
    return s;
  };
  p.u_lo = Vec::Constant(1, -1.0);
  p.u_hi = Vec::Constant(1, 1.0);

  OcpSolution sol = OcpSolver().solve(p);
  CHECK(sol.status == SolveStatus::Converged);

  // oracle: one switch from +1 to -1 (Pontryagin gives at most one switch
  // for a double integrator with a terminal cost); grid over the switch
  // stage plus a fine grid over the value taken at the switch stage itself
  auto rollout_cost = [&](const std::vector<double>& u) {
    Vec x = Vec::Zero(2);
    double c = 0;
    for (int i = 0; i < N; ++i) {
      c += 0.5 * ru * u[i] * u[i];
      x = A * x + B * Vec::Constant(1, u[i]);
    }
    const double ex = x(0) - target, ev = x(1);
    return c + 50.0 * (ex * ex + ev * ev);
  };
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_u;
  for (int k = 0; k <= N; ++k) {
    for (int g = 0; g <= 400; ++g) {
      std::vector<double> u(N, 1.0);
      for (int i = k + 1; i < N; ++i) u[i] = -1.0;
      if (k < N) u[k] = -1.0 + 2.0 * g / 400.0;
      const double c = rollout_cost(u);
      if (c < best) {
        best = c;
        best_u = u;
      }
    }
  }
  CHECK(sol.cost <= best + 1e-6);
  // all stages saturated except possibly the single switch stage
  int interior = 0;
  for (const Vec& u : sol.u_traj)
    if (std::abs(std::abs(u(0)) - 1.0) > 1e-6) ++interior;
  CHECK(interior <= 1);
  CHECK(sol.u_traj.front()(0) == doctest::Approx(1.0));
  CHECK(sol.u_traj.back()(0) == doctest::Approx(-1.0));
}

TEST_CASE("qp_solve") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> N01(0.0, 1.0);
  const int N = 5, nx = 3, nu = 2;
  QpData qp;
  qp.N = N;
  qp.dx0 = Vec(nx);
  qp.dx0 << 0.4, -0.2, 0.1;
  qp.A.resize(N);
  qp.B.resize(N);
  qp.c.resize(N);
  qp.quad.resize(N + 1);
  for (int i = 0; i < N; ++i) {
    qp.A[i] = Mat(nx, nx);
    qp.B[i] = Mat(nx, nu);
    qp.c[i] = Vec(nx);
    for (int r = 0; r < nx; ++r) {
      qp.c[i](r) = 0.1 * N01(rng);
      for (int j = 0; j < nx; ++j) qp.A[i](r, j) = 0.4 * N01(rng);
      for (int j = 0; j < nu; ++j) qp.B[i](r, j) = N01(rng);
    }
    qp.quad[i].Qxx = random_psd(nx, rng, 0.3);
    qp.quad[i].Quu = random_psd(nu, rng, 0.3);
    qp.quad[i].Qux = Mat::Zero(nu, nx);
    qp.quad[i].qx = Vec(nx);
    qp.quad[i].qu = Vec(nu);
    for (int j = 0; j < nx; ++j) qp.quad[i].qx(j) = N01(rng);
    for (int j = 0; j < nu; ++j) qp.quad[i].qu(j) = N01(rng);
  }
  qp.quad[N].Qxx = random_psd(nx, rng, 0.5);
  qp.quad[N].qx = Vec(nx);
  for (int j = 0; j < nx; ++j) qp.quad[N].qx(j) = N01(rng);
  qp.reg = 0.0;

  QpSolution sol = qp_solve(qp);

  SUBCASE("matches a dense KKT-system solve") {
    // variables z = [dx_0..dx_N, du_0..du_{N-1}]
    const int nz = (N + 1) * nx + N * nu;
    const int nc = (N + 1) * nx;  // dx_0 pin + N dynamics rows
    Mat H = Mat::Zero(nz, nz);
    Vec q = Vec::Zero(nz);
    Mat G = Mat::Zero(nc, nz);
    Vec b = Vec::Zero(nc);
    auto xi = [nx](int i) { return i * nx; };
    auto ui = [&](int i) { return (N + 1) * nx + i * nu; };
    for (int i = 0; i < N; ++i) {
      H.block(xi(i), xi(i), nx, nx) = qp.quad[i].Qxx;
      H.block(ui(i), ui(i), nu, nu) = qp.quad[i].Quu;
      q.segment(xi(i), nx) = qp.quad[i].qx;
      q.segment(ui(i), nu) = qp.quad[i].qu;
      G.block(nx + i * nx, xi(i), nx, nx) = qp.A[i];
      G.block(nx + i * nx, ui(i), nx, nu) = qp.B[i];
      G.block(nx + i * nx, xi(i + 1), nx, nx) = -Mat::Identity(nx, nx);
      b.segment(nx + i * nx, nx) = -qp.c[i];
    }
    H.block(xi(N), xi(N), nx, nx) = qp.quad[N].Qxx;
    q.segment(xi(N), nx) = qp.quad[N].qx;
    G.block(0, 0, nx, nx) = Mat::Identity(nx, nx);
    b.head(nx) = qp.dx0;

    Mat KKT = Mat::Zero(nz + nc, nz + nc);
    KKT.block(0, 0, nz, nz) = H;
    KKT.block(0, nz, nz, nc) = G.transpose();
    KKT.block(nz, 0, nc, nz) = G;
    Vec rhs(nz + nc);
    rhs << -q, b;
    const Vec z = KKT.fullPivLu().solve(rhs);

    for (int i = 0; i <= N; ++i)
      CHECK((sol.dx[i] - z.segment(xi(i), nx)).lpNorm<Eigen::Infinity>() < 1e-9);
    for (int i = 0; i < N; ++i)
      CHECK((sol.du[i] - z.segment(ui(i), nu)).lpNorm<Eigen::Infinity>() < 1e-9);
    // dynamics multipliers: the costate at stage i+1 equals the dual of
    // the constraint linking stages i and i+1 (sign per our Lagrangian)
    for (int i = 1; i <= N; ++i)
      CHECK((sol.lam[i] - z.segment(nz + i * nx, nx)).lpNorm<Eigen::Infinity>() < 1e-8);
  }

  SUBCASE("inactive bounds leave the solution unchanged") {
    QpData wide = qp;
    wide.u_lo = Vec::Constant(nu, -1e6);
    wide.u_hi = Vec::Constant(nu, 1e6);
    QpSolution bounded = qp_solve(wide);
    for (int i = 0; i < N; ++i)
      CHECK((sol.du[i] - bounded.du[i]).lpNorm<Eigen::Infinity>() < 1e-9);
  }

  SUBCASE("scaling the cost by 10 leaves the argmin unchanged") {
    QpData scaled = qp;
    for (auto& s : scaled.quad) {
      s.cost *= 10;
      s.qx *= 10;
      if (s.qu.size()) s.qu *= 10;
      s.Qxx *= 10;
      if (s.Quu.size()) s.Quu *= 10;
      if (s.Qux.size()) s.Qux *= 10;
    }
    QpSolution s10 = qp_solve(scaled);
    for (int i = 0; i < N; ++i)
      CHECK((sol.du[i] - s10.du[i]).lpNorm<Eigen::Infinity>() < 1e-9);
  }

  SUBCASE("indefinite stage hessian is rejected") {
    QpData bad = qp;
    bad.quad[2].Quu = -Mat::Identity(nu, nu);
    CHECK_THROWS_AS(qp_solve(bad), std::runtime_error);
  }
}

namespace {

// nonlinear rolling benchmark: dynamic bicycle chasing a point moving on a
// circle, the kind of sequence an MPC loop produces tick after tick
OcpProblem make_chase(const VehicleModel& model, const Vec& x0, double t0, int N, double dt) {
  OcpProblem p;
  p.N = N;
  p.nx = model.nx();
  p.nu = 2;
  p.x0 = x0;
  p.dynamics = [&model, dt](const Vec& x, const Vec& u, int) {
    return model.step_rk4(x, Vec2(u(0), u(1)), dt);
  };
  p.dynamics_jac = [&model, dt](const Vec& x, const Vec& u, int, Mat& fx, Mat& fu) {
    model.step_jacobians(x, Vec2(u(0), u(1)), dt, fx, fu);
  };
  auto ref = [t0, dt](int i) {
    const double ang = 1.8 * (t0 + i * dt);
    return Vec2(0.9 * std::cos(ang), 0.9 * std::sin(ang));
  };
  const int nx = p.nx;
  auto quad_at = [ref, nx](const Vec& x, const Vec& u, int i, double w) {
    StageQuad s;
    const Vec2 e(x(0) - ref(i)(0), x(1) - ref(i)(1));
    s.cost = 0.5 * w * e.squaredNorm() + 0.5 * 0.05 * u.squaredNorm();
    s.qx = Vec::Zero(nx);
    s.qx(0) = w * e(0);
    s.qx(1) = w * e(1);
    s.qu = 0.05 * u;
    s.Qxx = Mat::Zero(nx, nx);
    s.Qxx(0, 0) = s.Qxx(1, 1) = w;
    s.Quu = 0.05 * Mat::Identity(2, 2);
    s.Qux = Mat::Zero(2, nx);
    return s;
  };
  p.stage_cost = [quad_at](const Vec& x, const Vec& u, int i) { return quad_at(x, u, i, 2.0); };
  p.terminal_cost = [quad_at, N](const Vec& x) {
    StageQuad s = quad_at(x, Vec::Zero(2), N, 5.0);
    s.qu = Vec();
    s.Quu = Mat();
    s.Qux = Mat();
    return s;
  };
  p.u_lo = (Vec(2) << -0.4, -1.0).finished();
  p.u_hi = (Vec(2) << 0.4, 1.0).finished();
  return p;
}

}  // namespace

TEST_CASE("warm starting on a rolling sequence") {
  VehicleModel model(ModelType::Kinematic, ModelParams{});
  const int N = 30;
  const double dt = 1.0 / 30.0;
  Vec x(4);
  x << 0.9, 0, 1.5707963267948966, 1.0;

  SolveOptions opts;
  int cold_total = 0, warm_total = 0;
  OcpSolution prev;
  bool have_prev = false;
  OcpSolver solver;
  for (int k = 0; k < 25; ++k) {
    OcpProblem p = make_chase(model, x, k * dt, N, dt);
    OcpSolution cold = solver.solve(p, opts);
    CHECK(cold.status == SolveStatus::Converged);

    OcpSolution warm;
    if (have_prev) {
      OcpSolution shifted = prev;
      shifted.u_traj.erase(shifted.u_traj.begin());
      shifted.u_traj.push_back(shifted.u_traj.back());
      warm = solver.solve(p, opts, &shifted);
    } else {
      warm = solver.solve(p, opts);
    }
    CHECK(warm.status == SolveStatus::Converged);
    // the first solve has nothing to warm-start from; count the rest
    if (have_prev) {
      cold_total += cold.iterations;
      warm_total += warm.iterations;
    }
    prev = warm;
    have_prev = true;

    x = model.step_rk4(x, Vec2(warm.u_traj[0](0), warm.u_traj[0](1)), dt);
  }
  CHECK(2 * warm_total <= cold_total);
}

TEST_CASE("merit function non-increasing across iterations") {
  VehicleModel model(ModelType::Kinematic, ModelParams{});
  Vec x(4);
  x << 0.8, 0.1, 1.4, 0.9;
  OcpProblem p = make_chase(model, x, 0.0, 20, 1.0 / 30.0);
  std::ostringstream log;
  SolveOptions opts;
  opts.log = &log;
  OcpSolution sol = OcpSolver().solve(p, opts);
  CHECK(sol.status == SolveStatus::Converged);

  std::istringstream in(log.str());
  std::string word;
  std::vector<double> costs;
  while (in >> word)
    if (word == "cost") {
      double c;
      in >> c;
      costs.push_back(c);
    }
  REQUIRE(costs.size() >= 2);
  for (size_t i = 1; i < costs.size(); ++i) CHECK(costs[i] <= costs[i - 1]);
}

TEST_CASE("converged solutions satisfy dynamics and bounds") {
  VehicleModel model(ModelType::Kinematic, ModelParams{});
  Vec x(4);
  x << 1.1, 0.2, 1.8, 1.2;
  OcpProblem p = make_chase(model, x, 0.0, 20, 1.0 / 30.0);
  OcpSolution sol = OcpSolver().solve(p);
  CHECK(sol.status == SolveStatus::Converged);
  CHECK(sol.kkt_residual <= 1e-6);
  Vec xi = p.x0;
  for (int i = 0; i < p.N; ++i) {
    CHECK((sol.x_traj[i] - xi).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK((sol.u_traj[i] - p.u_lo).minCoeff() >= -1e-8);
    CHECK((p.u_hi - sol.u_traj[i]).minCoeff() >= -1e-8);
    xi = p.dynamics(xi, sol.u_traj[i], i);
  }
  CHECK((sol.x_traj[p.N] - xi).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("solver determinism") {
  VehicleModel model(ModelType::Dynamic, ModelParams{});
  Vec x(6);
  x << 0.9, 0.1, 1.2, 0.7, 0.01, 0.2;
  OcpProblem p = make_chase(model, x, 0.3, 20, 1.0 / 30.0);
  OcpSolution a = OcpSolver().solve(p);
  OcpSolution b = OcpSolver().solve(p);
  CHECK(a.iterations == b.iterations);
  CHECK(a.cost == b.cost);
  for (int i = 0; i < p.N; ++i) CHECK(a.u_traj[i] == b.u_traj[i]);
}

TEST_CASE("real-time iteration mode runs exactly one iteration") {
  std::mt19937_64 rng(9);
  const Mat A = Mat::Identity(3, 3) * 1.05;
  const Mat B = (Mat(3, 2) << 1, 0, 0, 1, 0.5, 0.5).finished();
  const Mat Q = random_psd(3, rng, 0.2);
  const Mat R = random_psd(2, rng, 0.2);
  Vec x0(3);
  x0 << 1, -2, 0.5;
  OcpProblem p = make_lqr(A, B, Q, R, Q, x0, 15);
  SolveOptions opts;
  opts.rti = true;
  OcpSolution rti = OcpSolver().solve(p, opts);
  OcpSolution full = OcpSolver().solve(p);
  CHECK(rti.iterations == 1);
  // on a quadratic problem the single Gauss-Newton step is already optimal
  for (int i = 0; i < p.N; ++i)
    CHECK((rti.u_traj[i] - full.u_traj[i]).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("diverging rollout reports infeasible instead of crashing") {
  OcpProblem p;
  p.N = 8;
  p.nx = 1;
  p.nu = 1;
  p.x0 = Vec::Constant(1, 1e200);
  p.dynamics = [](const Vec& x, const Vec&, int) { return Vec(x.array().square()); };
  p.dynamics_jac = [](const Vec& x, const Vec&, int, Mat& fx, Mat& fu) {
    fx = Mat::Constant(1, 1, 2 * x(0));
    fu = Mat::Zero(1, 1);
  };
  p.stage_cost = [](const Vec& x, const Vec& u, int) {
    StageQuad s;
    s.cost = 0.5 * x.squaredNorm() + 0.5 * u.squaredNorm();
    s.qx = x;
    s.qu = u;
    s.Qxx = Mat::Identity(1, 1);
    s.Quu = Mat::Identity(1, 1);
    s.Qux = Mat::Zero(1, 1);
    return s;
  };
  p.terminal_cost = [](const Vec& x) {
    StageQuad s;
    s.cost = 0.5 * x.squaredNorm();
    s.qx = x;
    s.Qxx = Mat::Identity(1, 1);
    return s;
  };
  OcpSolution sol = OcpSolver().solve(p);
  CHECK(sol.status == SolveStatus::Infeasible);
}

TEST_CASE("soft stage inequality keeps violations near zero at high weight") {
  // steer a 1-d integrator toward a target past a soft ceiling; the
  // converged trajectory should respect the ceiling up to the penalty slack
  OcpProblem p;
  p.N = 30;
  p.nx = 1;
  p.nu = 1;
  p.x0 = Vec::Zero(1);
  p.dynamics = [](const Vec& x, const Vec& u, int) { return Vec(x + 0.1 * u); };
  p.dynamics_jac = [](const Vec&, const Vec&, int, Mat& fx, Mat& fu) {
    fx = Mat::Identity(1, 1);
    fu = Mat::Constant(1, 1, 0.1);
  };
  p.stage_cost = [](const Vec& x, const Vec& u, int) {
    StageQuad s;
    const double e = x(0) - 2.0;
    s.cost = 0.5 * e * e + 0.005 * u.squaredNorm();
    s.qx = Vec::Constant(1, e);
    s.qu = 0.01 * u;
    s.Qxx = Mat::Identity(1, 1);
    s.Quu = 0.01 * Mat::Identity(1, 1);
    s.Qux = Mat::Zero(1, 1);
    return s;
  };
  p.terminal_cost = [](const Vec& x) {
    StageQuad s;
    const double e = x(0) - 2.0;
    s.cost = 0.5 * e * e;
    s.qx = Vec::Constant(1, e);
    s.Qxx = Mat::Identity(1, 1);
    return s;
  };
  // ceiling x <= 1 expressed as g(x) = x - 1 <= 0
  p.stage_ineq = [](const Vec& x, int) { return Vec::Constant(1, x(0) - 1.0); };
  p.stage_ineq_jac = [](const Vec&, int) { return Mat::Identity(1, 1); };
  p.terminal_ineq = [](const Vec& x) { return Vec::Constant(1, x(0) - 1.0); };
  p.terminal_ineq_jac = [](const Vec&) { return Mat::Identity(1, 1); };
  p.w_soft = 1e6;

  OcpSolution sol = OcpSolver().solve(p);
  CHECK(sol.status == SolveStatus::Converged);
  double worst = 0;
  for (const Vec& x : sol.x_traj) worst = std::max(worst, x(0) - 1.0);
  CHECK(worst < 1e-4);
  // it should still push up against the ceiling, not hide at the origin
  CHECK(sol.x_traj.back()(0) > 0.99);
}
