#include "crs/models.hpp"

#include <cmath>

namespace crs {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0) a += 2.0 * kPi;
  return a - kPi;
}

ModelType model_type_from_string(const std::string& s) {
  if (s == "kinematic") return ModelType::Kinematic;
  if (s == "dynamic") return ModelType::Dynamic;
  throw ParseError("unknown model type: " + s);
}

std::string to_string(ModelType t) {
  return t == ModelType::Kinematic ? "kinematic" : "dynamic";
}

void ModelParams::validate() const {
  auto req = [](bool ok, const char* what) {
    if (!ok) throw ParseError(std::string("invalid model params: ") + what);
  };
  req(l_f > 0 && l_r > 0, "axle distances must be positive");
  req(m > 0 && I_z > 0, "mass and inertia must be positive");
  req(D_f > 0 && D_r > 0, "Pacejka D must be positive");
  req(B_f > 0 && B_r > 0, "Pacejka B must be positive");
  req(C_f >= 1.0 && C_r >= 1.0, "Pacejka C must be >= 1");
  req(delta_max > 0 && delta_max < kPi / 2, "delta_max in (0, pi/2)");
  req(a_scale > 0, "a_scale must be positive");
  req(v_blend_lo >= 0 && v_blend_lo < v_blend_hi, "0 <= v_blend_lo < v_blend_hi");
  req(tau_blend > 0, "tau_blend must be positive");
}

ModelParams ModelParams::from_doc(const KvDoc& doc) {
  if (doc.get_str("format", "crs-params-v1") != "crs-params-v1")
    throw ParseError("unsupported params format: " + doc.get_str("format"));
  ModelParams p;
  p.l_f = doc.get_num("l_f_m", p.l_f);
  p.l_r = doc.get_num("l_r_m", p.l_r);
  p.m = doc.get_num("mass_kg", p.m);
  p.I_z = doc.get_num("inertia_z_kgm2", p.I_z);
  p.B_f = doc.get_num("pacejka_b_f", p.B_f);
  p.C_f = doc.get_num("pacejka_c_f", p.C_f);
  p.D_f = doc.get_num("pacejka_d_f_n", p.D_f);
  p.B_r = doc.get_num("pacejka_b_r", p.B_r);
  p.C_r = doc.get_num("pacejka_c_r", p.C_r);
  p.D_r = doc.get_num("pacejka_d_r_n", p.D_r);
  p.c1 = doc.get_num("drive_c1_n", p.c1);
  p.c2 = doc.get_num("drive_c2_ns_per_m", p.c2);
  p.c3 = doc.get_num("drive_c3_ns2_per_m2", p.c3);
  p.c4 = doc.get_num("drive_c4_n", p.c4);
  p.delta_max = doc.get_num("delta_max_rad", p.delta_max);
  p.a_scale = doc.get_num("a_scale_mps2", p.a_scale);
  p.v_blend_lo = doc.get_num("v_blend_lo_mps", p.v_blend_lo);
  p.v_blend_hi = doc.get_num("v_blend_hi_mps", p.v_blend_hi);
  p.tau_blend = doc.get_num("tau_blend_s", p.tau_blend);
  p.validate();
  return p;
}

ModelParams ModelParams::load(const std::string& path) { return from_doc(KvDoc::load(path)); }

KvDoc ModelParams::to_doc() const {
  KvDoc d;
  d.set("format", std::string("crs-params-v1"));
  d.set("l_f_m", l_f);
  d.set("l_r_m", l_r);
  d.set("mass_kg", m);
  d.set("inertia_z_kgm2", I_z);
  d.set("pacejka_b_f", B_f);
  d.set("pacejka_c_f", C_f);
  d.set("pacejka_d_f_n", D_f);
  d.set("pacejka_b_r", B_r);
  d.set("pacejka_c_r", C_r);
  d.set("pacejka_d_r_n", D_r);
  d.set("drive_c1_n", c1);
  d.set("drive_c2_ns_per_m", c2);
  d.set("drive_c3_ns2_per_m2", c3);
  d.set("drive_c4_n", c4);
  d.set("delta_max_rad", delta_max);
  d.set("a_scale_mps2", a_scale);
  d.set("v_blend_lo_mps", v_blend_lo);
  d.set("v_blend_hi_mps", v_blend_hi);
  d.set("tau_blend_s", tau_blend);
  return d;
}

Vec KinematicState::vec() const {
  Vec x(4);
  x << x_p, y_p, psi, v;
  return x;
}

KinematicState KinematicState::from(const Vec& x) { return {x(0), x(1), x(2), x(3)}; }

Vec DynamicState::vec() const {
  Vec x(6);
  x << x_p, y_p, psi, v_x, v_y, omega;
  return x;
}

DynamicState DynamicState::from(const Vec& x) { return {x(0), x(1), x(2), x(3), x(4), x(5)}; }

double slip_angle_beta(double delta, const ModelParams& p) {
  if (std::abs(delta) >= kPi / 2) throw std::domain_error("slip_angle_beta: |delta| >= pi/2");
  return std::atan(p.l_r / (p.l_r + p.l_f) * std::tan(delta));
}

namespace {

// Lateral tire force for slip angle alpha = atan(.) - delta, with its
// derivative. The force opposes the slip, so the magnitude curve
// D sin(C atan(B alpha)) enters with a minus sign; dropping it flips the
// lateral dynamics into positive feedback and the car spins on any arc.
inline double pacejka(double alpha, double B, double C, double D, double* dF = nullptr) {
  const double t = std::atan(B * alpha);
  if (dF) *dF = -D * std::cos(C * t) * C * B / (1.0 + B * B * alpha * alpha);
  return -D * std::sin(C * t);
}

// The drag term is written c3 v|v| rather than c3 v^2 so that it opposes
// motion in reverse as well; the two agree for forward driving.
inline double longitudinal_force(double v_x, double a, const ModelParams& p, double* d_vx = nullptr,
                                 double* d_a = nullptr) {
  if (d_vx) *d_vx = p.c2 * a + 2.0 * p.c3 * std::abs(v_x);
  if (d_a) *d_a = p.c1 + p.c2 * v_x;
  return (p.c1 + p.c2 * v_x) * a + p.c3 * v_x * std::abs(v_x) + p.c4;
}

}  // namespace

TireForces pacejka_forces(const DynamicState& x, const ControlInput& u, const ModelParams& p,
                          bool guard) {
  double v_xs = x.v_x;
  if (guard) {
    v_xs = std::max(x.v_x, p.v_blend_lo > 0 ? p.v_blend_lo : 1e-3);
  } else if (std::abs(v_xs) < 1e-9) {
    throw SingularityError("pacejka_forces: v_x = 0 without low-speed guard");
  }
  TireForces f;
  f.alpha_f = std::atan((x.v_y + x.omega * p.l_f) / v_xs) - u.delta;
  f.alpha_r = std::atan((x.v_y - x.omega * p.l_r) / v_xs);
  f.F_f = pacejka(f.alpha_f, p.B_f, p.C_f, p.D_f);
  f.F_r = pacejka(f.alpha_r, p.B_r, p.C_r, p.D_r);
  f.F_x = longitudinal_force(x.v_x, u.a, p);
  return f;
}

Vec kinematic_derivative(const KinematicState& x, const ControlInput& u, const ModelParams& p) {
  const double beta = slip_angle_beta(u.delta, p);
  Vec dx(4);
  dx << x.v * std::cos(x.psi + beta), x.v * std::sin(x.psi + beta),
      x.v / p.l_r * std::sin(beta), u.a * p.a_scale;
  return dx;
}

namespace {

// Blend weight for the low-speed guard and its derivative in v_x.
inline double blend_weight(double v_x, const ModelParams& p, double* dw) {
  if (v_x <= p.v_blend_lo) {
    *dw = 0;
    return 0;
  }
  if (v_x >= p.v_blend_hi) {
    *dw = 0;
    return 1;
  }
  *dw = 1.0 / (p.v_blend_hi - p.v_blend_lo);
  return (v_x - p.v_blend_lo) / (p.v_blend_hi - p.v_blend_lo);
}

// Pure dynamic-model rows (v_x dot, v_y dot, omega dot), slip denominators
// clamped at v_blend_lo. Optionally fills the 3x6 state and 3x2 input
// Jacobian blocks of these rows.
void dynamic_force_rows(const DynamicState& x, const ControlInput& u, const ModelParams& p,
                        Eigen::Vector3d& f, Eigen::Matrix<double, 3, 6>* jx,
                        Eigen::Matrix<double, 3, 2>* ju) {
  const double lo = p.v_blend_lo > 0 ? p.v_blend_lo : 1e-3;
  const double v_xs = std::max(x.v_x, lo);
  const double s_clamp = x.v_x > lo ? 1.0 : 0.0;

  const double u_f = x.v_y + x.omega * p.l_f;
  const double u_r = x.v_y - x.omega * p.l_r;
  const double q_f = u_f / v_xs;
  const double q_r = u_r / v_xs;
  const double alpha_f = std::atan(q_f) - u.delta;
  const double alpha_r = std::atan(q_r);

  double dFf, dFr;
  const double F_f = pacejka(alpha_f, p.B_f, p.C_f, p.D_f, &dFf);
  const double F_r = pacejka(alpha_r, p.B_r, p.C_r, p.D_r, &dFr);
  double dFx_vx, dFx_a;
  const double F_x = longitudinal_force(x.v_x, u.a, p, &dFx_vx, &dFx_a);

  const double sd = std::sin(u.delta);
  const double cd = std::cos(u.delta);

  f(0) = (F_x - F_f * sd) / p.m + x.v_y * x.omega;
  f(1) = (F_r + F_f * cd) / p.m - x.v_x * x.omega;
  f(2) = (F_f * p.l_f * cd - F_r * p.l_r) / p.I_z;

  if (!jx) return;

  const double df = 1.0 / (v_xs * (1.0 + q_f * q_f));
  const double dr = 1.0 / (v_xs * (1.0 + q_r * q_r));
  // d alpha / d (v_x, v_y, omega, delta)
  const double af_vx = -u_f * s_clamp / (v_xs * v_xs * (1.0 + q_f * q_f));
  const double af_vy = df;
  const double af_om = p.l_f * df;
  const double ar_vx = -u_r * s_clamp / (v_xs * v_xs * (1.0 + q_r * q_r));
  const double ar_vy = dr;
  const double ar_om = -p.l_r * dr;

  jx->setZero();
  // row 0: v_x dot
  (*jx)(0, 3) = (dFx_vx - dFf * af_vx * sd) / p.m;
  (*jx)(0, 4) = (-dFf * af_vy * sd) / p.m + x.omega;
  (*jx)(0, 5) = (-dFf * af_om * sd) / p.m + x.v_y;
  // row 1: v_y dot
  (*jx)(1, 3) = (dFr * ar_vx + dFf * af_vx * cd) / p.m - x.omega;
  (*jx)(1, 4) = (dFr * ar_vy + dFf * af_vy * cd) / p.m;
  (*jx)(1, 5) = (dFr * ar_om + dFf * af_om * cd) / p.m - x.v_x;
  // row 2: omega dot
  (*jx)(2, 3) = (dFf * af_vx * p.l_f * cd - dFr * ar_vx * p.l_r) / p.I_z;
  (*jx)(2, 4) = (dFf * af_vy * p.l_f * cd - dFr * ar_vy * p.l_r) / p.I_z;
  (*jx)(2, 5) = (dFf * af_om * p.l_f * cd - dFr * ar_om * p.l_r) / p.I_z;

  ju->setZero();
  (*ju)(0, 0) = (dFf * sd - F_f * cd) / p.m;  // dalpha_f/ddelta = -1
  (*ju)(0, 1) = dFx_a / p.m;
  (*ju)(1, 0) = (-dFf * cd - F_f * sd) / p.m;
  (*ju)(2, 0) = (-dFf * p.l_f * cd - F_f * p.l_f * sd) / p.I_z;
}

// Kinematic lateral target rows used below the blend band: v_x follows the
// drive-train force, v_y and omega relax to the kinematic relations.
void kinematic_relax_rows(const DynamicState& x, const ControlInput& u, const ModelParams& p,
                          Eigen::Vector3d& f, Eigen::Matrix<double, 3, 6>* jx,
                          Eigen::Matrix<double, 3, 2>* ju) {
  const double k = p.l_r / (p.l_r + p.l_f);
  const double td = std::tan(u.delta);
  const double tb = k * td;  // tan(beta)
  const double v_y_kin = x.v_x * tb;
  const double omega_kin = x.v_x * tb / p.l_r;
  double dFx_vx, dFx_a;
  const double F_x = longitudinal_force(x.v_x, u.a, p, &dFx_vx, &dFx_a);

  f(0) = F_x / p.m;
  f(1) = (v_y_kin - x.v_y) / p.tau_blend;
  f(2) = (omega_kin - x.omega) / p.tau_blend;

  if (!jx) return;
  const double sec2 = 1.0 + td * td;
  jx->setZero();
  (*jx)(0, 3) = dFx_vx / p.m;
  (*jx)(1, 3) = tb / p.tau_blend;
  (*jx)(1, 4) = -1.0 / p.tau_blend;
  (*jx)(2, 3) = tb / (p.l_r * p.tau_blend);
  (*jx)(2, 5) = -1.0 / p.tau_blend;
  ju->setZero();
  (*ju)(0, 1) = dFx_a / p.m;
  (*ju)(1, 0) = x.v_x * k * sec2 / p.tau_blend;
  (*ju)(2, 0) = x.v_x * k * sec2 / (p.l_r * p.tau_blend);
}

}  // namespace

Vec dynamic_derivative(const DynamicState& x, const ControlInput& u, const ModelParams& p) {
  const double cp = std::cos(x.psi);
  const double sp = std::sin(x.psi);
  double dw;
  const double w = blend_weight(x.v_x, p, &dw);

  Eigen::Vector3d fd = Eigen::Vector3d::Zero();
  Eigen::Vector3d fk = Eigen::Vector3d::Zero();
  if (w > 0) dynamic_force_rows(x, u, p, fd, nullptr, nullptr);
  if (w < 1) kinematic_relax_rows(x, u, p, fk, nullptr, nullptr);

  Vec dx(6);
  dx(0) = x.v_x * cp - x.v_y * sp;
  dx(1) = x.v_x * sp + x.v_y * cp;
  dx(2) = x.omega;
  dx.segment<3>(3) = w * fd + (1.0 - w) * fk;
  return dx;
}

VehicleModel::VehicleModel(ModelType type, ModelParams params)
    : type_(type), params_(std::move(params)) {
  params_.validate();
}

Vec VehicleModel::deriv(const Vec& x, const Vec2& u) const {
  if (type_ == ModelType::Kinematic)
    return kinematic_derivative(KinematicState::from(x), ControlInput::from(u), params_);
  return dynamic_derivative(DynamicState::from(x), ControlInput::from(u), params_);
}

void VehicleModel::deriv_jac(const Vec& x, const Vec2& u, Mat& fx, Mat& fu) const {
  const ModelParams& p = params_;
  if (type_ == ModelType::Kinematic) {
    const double beta = slip_angle_beta(u(0), p);
    const double psi = x(2), v = x(3);
    const double cb = std::cos(psi + beta);
    const double sb = std::sin(psi + beta);
    const double td = std::tan(u(0));
    const double k = p.l_r / (p.l_r + p.l_f);
    const double dbeta = k * (1.0 + td * td) / (1.0 + k * k * td * td);
    fx = Mat::Zero(4, 4);
    fx(0, 2) = -v * sb;
    fx(0, 3) = cb;
    fx(1, 2) = v * cb;
    fx(1, 3) = sb;
    fx(2, 3) = std::sin(beta) / p.l_r;
    fu = Mat::Zero(4, 2);
    fu(0, 0) = -v * sb * dbeta;
    fu(1, 0) = v * cb * dbeta;
    fu(2, 0) = v * std::cos(beta) / p.l_r * dbeta;
    fu(3, 1) = p.a_scale;
    return;
  }

  const DynamicState xs = DynamicState::from(x);
  const ControlInput us = ControlInput::from(u);
  const double cp = std::cos(xs.psi), sp = std::sin(xs.psi);
  double dw;
  const double w = blend_weight(xs.v_x, p, &dw);

  Eigen::Vector3d fd = Eigen::Vector3d::Zero(), fk = Eigen::Vector3d::Zero();
  Eigen::Matrix<double, 3, 6> jdx = Eigen::Matrix<double, 3, 6>::Zero();
  Eigen::Matrix<double, 3, 6> jkx = Eigen::Matrix<double, 3, 6>::Zero();
  Eigen::Matrix<double, 3, 2> jdu = Eigen::Matrix<double, 3, 2>::Zero();
  Eigen::Matrix<double, 3, 2> jku = Eigen::Matrix<double, 3, 2>::Zero();
  if (w > 0) dynamic_force_rows(xs, us, p, fd, &jdx, &jdu);
  if (w < 1) kinematic_relax_rows(xs, us, p, fk, &jkx, &jku);

  fx = Mat::Zero(6, 6);
  fx(0, 2) = -xs.v_x * sp - xs.v_y * cp;
  fx(0, 3) = cp;
  fx(0, 4) = -sp;
  fx(1, 2) = xs.v_x * cp - xs.v_y * sp;
  fx(1, 3) = sp;
  fx(1, 4) = cp;
  fx(2, 5) = 1.0;
  fx.block<3, 6>(3, 0) = w * jdx + (1.0 - w) * jkx;
  if (dw != 0) fx.block<3, 1>(3, 3) += (fd - fk) * dw;

  fu = Mat::Zero(6, 2);
  fu.block<3, 2>(3, 0) = w * jdu + (1.0 - w) * jku;
}

Vec VehicleModel::step_rk4(const Vec& x, const Vec2& u, double dt) const {
  if (!(dt > 0)) throw std::invalid_argument("step_rk4: dt must be positive");
  const Vec k1 = deriv(x, u);
  const Vec k2 = deriv(x + 0.5 * dt * k1, u);
  const Vec k3 = deriv(x + 0.5 * dt * k2, u);
  const Vec k4 = deriv(x + dt * k3, u);
  Vec next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw std::runtime_error("step_rk4: non-finite state");
  return next;
}

void VehicleModel::step_jacobians(const Vec& x, const Vec2& u, double dt, Mat& A, Mat& B) const {
  const int n = nx();
  if (dt == 0) {
    A = Mat::Identity(n, n);
    B = Mat::Zero(n, nu);
    return;
  }
  Mat f1x(n, n), f1u(n, nu), f2x(n, n), f2u(n, nu), f3x(n, n), f3u(n, nu), f4x(n, n), f4u(n, nu);

  const Vec k1 = deriv(x, u);
  deriv_jac(x, u, f1x, f1u);
  const Mat k1x = f1x;
  const Mat k1u = f1u;

  const Vec x2 = x + 0.5 * dt * k1;
  const Vec k2 = deriv(x2, u);
  deriv_jac(x2, u, f2x, f2u);
  const Mat k2x = f2x * (Mat::Identity(n, n) + 0.5 * dt * k1x);
  const Mat k2u = f2x * (0.5 * dt * k1u) + f2u;

  const Vec x3 = x + 0.5 * dt * k2;
  const Vec k3 = deriv(x3, u);
  deriv_jac(x3, u, f3x, f3u);
  const Mat k3x = f3x * (Mat::Identity(n, n) + 0.5 * dt * k2x);
  const Mat k3u = f3x * (0.5 * dt * k2u) + f3u;

  const Vec x4 = x + dt * k3;
  deriv_jac(x4, u, f4x, f4u);
  const Mat k4x = f4x * (Mat::Identity(n, n) + dt * k3x);
  const Mat k4u = f4x * (dt * k3u) + f4u;

  A = Mat::Identity(n, n) + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
  B = dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
}

}  // namespace crs
