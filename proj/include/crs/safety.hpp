#pragma once

#include <optional>
#include <vector>

#include "crs/estimation.hpp"
#include "crs/ocp.hpp"
#include "crs/track.hpp"

namespace crs {

enum class FilterStatus { PassThrough, Filtered, Backup, Emergency };

std::string to_string(FilterStatus s);

/// Outcome of one filter tick: the input to apply, how it was obtained,
/// and how far it is from the desired input.
struct FilterDecision {
  ControlInput u;
  FilterStatus status = FilterStatus::PassThrough;
  double intervention = 0;  // ||u - u_d||
};

struct SafetyConfig {
  int N = 40;
  ModelType model = ModelType::Dynamic;
  Vec2 R{1.0, 1.0};          // weight on u_0 - u_d
  Vec2 Delta_R{0.1, 0.1};    // weight on input rates
  Vec2 u_lo{-0.4, -1.0};
  Vec2 u_hi{0.4, 1.0};
  double v_safe = 0.3;       // terminal slow-driving speed bound [m/s]
  double alpha_safe = 0.7853981633974483;  // terminal |alpha_e| bound [rad]
  double vehicle_margin = 0.04;
  double w_soft = 1e5;
  double viol_tol = 5e-3;    // a plan violating more than this is no backup
  double pass_tol = 1e-4;    // interventions below this count as pass-through
  bool enabled = true;       // false: pure pass-through (u = u_d)
  SolveOptions solve{.max_iters = 10};
  void validate() const;
};

/// Predictive safety filter: finds the input sequence closest to the
/// desired input whose rollout stays inside the track corridor and ends
/// slow and aligned. Keeps the rest of the last safe plan as a backup for
/// ticks where no plan is found.
class SafetyFilter {
 public:
  SafetyFilter(const Track& track, SafetyConfig cfg, ModelParams params);

  FilterDecision filter_input(const ControlInput& u_d, const Estimate& est,
                              const ControlInput& u_prev, double dt);
  void reset();

  bool has_backup() const { return !backup_.empty(); }
  const OcpSolution& last_solution() const { return last_; }

 private:
  OcpProblem build_problem(const Vec& xb, const ControlInput& u_d, const ControlInput& u_prev,
                           double dt) const;
  double plan_violation(const OcpProblem& p, const std::vector<Vec>& xs) const;

  const Track* track_;
  SafetyConfig cfg_;
  VehicleModel model_;
  std::vector<Vec2> backup_;  // safe inputs for the ticks after this one
  OcpSolution last_;
  bool have_last_ = false;
  std::optional<double> s_hint_;
  mutable double chain_hint_ = 0;  // projection hint threaded through the horizon
  OcpSolver solver_;
};

}  // namespace crs
