#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

#include "crs/config.hpp"

namespace crs {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;

/// Thrown when the dynamic model is evaluated at v_x = 0 with the
/// low-speed guard disabled (slip angles are undefined there).
struct SingularityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ModelType { Kinematic, Dynamic };

ModelType model_type_from_string(const std::string& s);
std::string to_string(ModelType t);

/// Vehicle parameters. Geometry and tire coefficients for the bicycle
/// models; the shipped default set lives in params/chronos_default.
struct ModelParams {
  double l_f = 0.047;   // CoG to front axle [m]
  double l_r = 0.047;   // CoG to rear axle [m]
  double m = 0.19;      // mass [kg]
  double I_z = 2.0e-4;  // yaw inertia [kg m^2]

  // Pacejka lateral force: F = D sin(C atan(B alpha))
  double B_f = 5.0, C_f = 1.3, D_f = 1.0;
  double B_r = 5.0, C_r = 1.3, D_r = 1.0;

  // Longitudinal force: F_x = (c1 + c2 v_x) a + c3 v_x^2 + c4
  double c1 = 1.0, c2 = -0.2, c3 = -0.08, c4 = 0.0;

  double delta_max = 0.40;  // steering limit [rad]
  double a_scale = 5.0;     // kinematic model: command -> acceleration [m/s^2]

  // Low-speed guard: below v_blend_lo the lateral dynamics follow the
  // kinematic relations, blending linearly up to v_blend_hi.
  double v_blend_lo = 0.1;
  double v_blend_hi = 0.3;
  double tau_blend = 0.05;  // relaxation time of the kinematic lateral target [s]

  void validate() const;
  static ModelParams from_doc(const KvDoc& doc);
  static ModelParams load(const std::string& path);
  KvDoc to_doc() const;
};

/// Kinematic state layout: [x_p, y_p, psi, v]
struct KinematicState {
  double x_p = 0, y_p = 0, psi = 0, v = 0;
  Vec vec() const;
  static KinematicState from(const Vec& x);
};

/// Dynamic state layout: [x_p, y_p, psi, v_x, v_y, omega]
struct DynamicState {
  double x_p = 0, y_p = 0, psi = 0, v_x = 0, v_y = 0, omega = 0;
  Vec vec() const;
  static DynamicState from(const Vec& x);
};

struct ControlInput {
  double delta = 0;  // steering [rad]
  double a = 0;      // normalized drive command [-1, 1]
  Vec2 vec() const { return Vec2(delta, a); }
  static ControlInput from(const Vec2& u) { return {u(0), u(1)}; }
};

struct TireForces {
  double F_f = 0, F_r = 0;          // lateral front/rear force [N]
  double alpha_f = 0, alpha_r = 0;  // slip angles [rad]
  double F_x = 0;                   // longitudinal force [N]
};

/// Chassis slip angle beta = atan(l_r/(l_r+l_f) tan(delta)).
double slip_angle_beta(double delta, const ModelParams& p);

/// Slip angles and tire forces of the dynamic model. With guard=true the
/// longitudinal speed entering the slip-angle denominators is clamped to
/// v_blend_lo; with guard=false, |v_x| below 1e-9 throws.
TireForces pacejka_forces(const DynamicState& x, const ControlInput& u, const ModelParams& p,
                          bool guard = true);

Vec kinematic_derivative(const KinematicState& x, const ControlInput& u, const ModelParams& p);
Vec dynamic_derivative(const DynamicState& x, const ControlInput& u, const ModelParams& p);

/// One bicycle model (kinematic or dynamic) over flat Eigen vectors, with
/// continuous derivative, analytic Jacobians, and an RK4 step whose
/// Jacobians are chained through the integrator stages.
class VehicleModel {
 public:
  VehicleModel(ModelType type, ModelParams params);

  ModelType type() const { return type_; }
  const ModelParams& params() const { return params_; }
  int nx() const { return type_ == ModelType::Kinematic ? 4 : 6; }
  static constexpr int nu = 2;

  Vec deriv(const Vec& x, const Vec2& u) const;
  /// Jacobians of the continuous derivative: fx (nx by nx), fu (nx by 2).
  void deriv_jac(const Vec& x, const Vec2& u, Mat& fx, Mat& fu) const;

  Vec step_rk4(const Vec& x, const Vec2& u, double dt) const;
  /// A = d step/dx, B = d step/du of the RK4 step.
  void step_jacobians(const Vec& x, const Vec2& u, double dt, Mat& A, Mat& B) const;

 private:
  ModelType type_;
  ModelParams params_;
};

double wrap_angle(double a);  // wrap to (-pi, pi]

}  // namespace crs
