#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "crs/models.hpp"

namespace crs {

/// Quadratic expansion of one stage cost around (x, u):
///   cost + qx'dx + qu'du + 1/2 dx'Qxx dx + du'Qux dx + 1/2 du'Quu du
/// Qxx/Quu/Qux are Gauss-Newton approximations and must be PSD.
struct StageQuad {
  double cost = 0;
  Vec qx, qu;
  Mat Qxx, Quu, Qux;
};

/// Discrete-time optimal control problem over a horizon of N stages.
/// States x_0..x_N, inputs u_0..u_{N-1}. Input boxes are hard; state
/// boxes and stage inequalities g(x) <= 0 are softened with quadratic
/// penalties (weight w_soft), which keeps every QP subproblem feasible.
struct OcpProblem {
  int N = 0;
  int nx = 0;
  int nu = 0;
  Vec x0;

  // x_{i+1} = f(x_i, u_i, i) and its Jacobians A = df/dx, B = df/du
  std::function<Vec(const Vec&, const Vec&, int)> dynamics;
  std::function<void(const Vec&, const Vec&, int, Mat&, Mat&)> dynamics_jac;

  // stage cost l(x_i, u_i, i) for i < N; terminal cost l_N(x_N)
  std::function<StageQuad(const Vec&, const Vec&, int)> stage_cost;
  std::function<StageQuad(const Vec&)> terminal_cost;

  // hard input box (empty vectors mean unconstrained)
  Vec u_lo, u_hi;
  // soft state box (empty vectors mean absent)
  Vec x_lo, x_hi;
  // optional stage inequality g(x_i) <= 0 with Jacobian dg/dx, softened
  std::function<Vec(const Vec&, int)> stage_ineq;
  std::function<Mat(const Vec&, int)> stage_ineq_jac;
  // optional terminal set h(x_N) <= 0, softened
  std::function<Vec(const Vec&)> terminal_ineq;
  std::function<Mat(const Vec&)> terminal_ineq_jac;

  double w_soft = 1e4;  // quadratic penalty weight on softened violations

  void validate() const;
};

enum class SolveStatus { Converged, MaxIter, Infeasible };

std::string to_string(SolveStatus s);

struct OcpSolution {
  std::vector<Vec> x_traj;  // N+1 states
  std::vector<Vec> u_traj;  // N inputs
  double cost = 0;
  double kkt_residual = 0;
  int iterations = 0;
  SolveStatus status = SolveStatus::Infeasible;
};

struct SolveOptions {
  double kkt_tol = 1e-6;
  int max_iters = 50;
  bool rti = false;  // exactly one Gauss-Newton iteration per call
  double reg = 1e-8;
  std::ostream* log = nullptr;  // per-iteration cost and kkt residual
};

/// Stagewise equality-constrained QP with optional input boxes:
///   min sum_i 1/2 dx'Qxx dx + qx'dx + du'Qux dx + 1/2 du'Quu du + qu'du
///   s.t. dx_{i+1} = A_i dx_i + B_i du_i + c_i,  dx_0 = dx0,
///        u_lo <= du_i <= u_hi (elementwise, if present)
struct QpData {
  int N = 0;
  Vec dx0;
  std::vector<Mat> A, B;
  std::vector<Vec> c;
  std::vector<StageQuad> quad;  // N stage quads + terminal quad at index N
  Vec u_lo, u_hi;               // bounds on du (already shifted by caller)
  double reg = 1e-8;
};

struct QpSolution {
  std::vector<Vec> dx, du;
  std::vector<Vec> lam;  // costates lambda_1..lambda_N (dual of dynamics)
  // feedback policy du_i = k_i + K_i dx_i from the Riccati recursion
  std::vector<Vec> k;
  std::vector<Mat> K;
  double cost = 0;
};

/// Riccati-structured solve, O(N) in the horizon length. Input boxes are
/// handled per stage with a projected-Newton box QP; with no bounds the
/// result is the exact equality-constrained optimum.
QpSolution qp_solve(const QpData& qp);

/// Gauss-Newton SQP on a single-shooting transcription: dynamics hold
/// exactly along every iterate, so the merit function is the (penalized)
/// cost itself. Backtracking line search keeps it non-increasing.
class OcpSolver {
 public:
  OcpSolution solve(const OcpProblem& problem, const SolveOptions& opts = {},
                    const OcpSolution* warm_start = nullptr);
};

}  // namespace crs
