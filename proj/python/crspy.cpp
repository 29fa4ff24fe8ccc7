#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "crs/harness.hpp"

namespace py = pybind11;
using namespace crs;

namespace {

// one row per tick, columns as EpisodeLog::columns(); enum columns carry
// their integer codes
Mat log_matrix(const EpisodeLog& log) {
  const auto& cols = EpisodeLog::columns();
  Mat m(static_cast<Eigen::Index>(log.rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const LogRow& r = log.rows[static_cast<std::size_t>(i)];
    Eigen::Index c = 0;
    m(i, c++) = r.t;
    for (int j = 0; j < 6; ++j) m(i, c++) = r.x_true(j);
    for (int j = 0; j < 6; ++j) m(i, c++) = r.x_est(j);
    m(i, c++) = r.u_d(0);
    m(i, c++) = r.u_d(1);
    m(i, c++) = r.u(0);
    m(i, c++) = r.u(1);
    m(i, c++) = static_cast<double>(r.filter_status);
    m(i, c++) = static_cast<double>(r.solver_status);
    m(i, c++) = r.solver_iters;
    m(i, c++) = r.solver_kkt;
    m(i, c++) = r.degraded ? 1.0 : 0.0;
    m(i, c++) = r.s;
    m(i, c++) = r.e_lat;
  }
  return m;
}

}  // namespace

PYBIND11_MODULE(crspy, m) {
  m.doc() = "Bicycle-model racing stack: models, track queries, and the closed-loop harness.";

  py::register_exception<ParseError>(m, "ParseError");

  py::enum_<ModelType>(m, "ModelType")
      .value("kinematic", ModelType::Kinematic)
      .value("dynamic", ModelType::Dynamic);
  py::enum_<PlantKind>(m, "PlantKind")
      .value("sim", PlantKind::Sim)
      .value("bridge", PlantKind::Bridge);
  py::enum_<ControllerKind>(m, "ControllerKind")
      .value("tracking_pid", ControllerKind::TrackingPid)
      .value("path_pid", ControllerKind::PathPid)
      .value("ffpid", ControllerKind::FfPid)
      .value("tracking_mpc", ControllerKind::TrackingMpc)
      .value("mpcc", ControllerKind::Mpcc);
  py::enum_<EstimatorKind>(m, "EstimatorKind")
      .value("velocity", EstimatorKind::Velocity)
      .value("ekf", EstimatorKind::Ekf)
      .value("full_state", EstimatorKind::FullState);
  py::enum_<SafetyKind>(m, "SafetyKind")
      .value("none", SafetyKind::None)
      .value("predictive", SafetyKind::Predictive);

  py::class_<ModelParams>(m, "ModelParams")
      .def(py::init<>())
      .def_static("load", &ModelParams::load, py::arg("path"))
      .def("validate", &ModelParams::validate)
      .def_readwrite("l_f", &ModelParams::l_f)
      .def_readwrite("l_r", &ModelParams::l_r)
      .def_readwrite("m", &ModelParams::m)
      .def_readwrite("I_z", &ModelParams::I_z)
      .def_readwrite("B_f", &ModelParams::B_f)
      .def_readwrite("C_f", &ModelParams::C_f)
      .def_readwrite("D_f", &ModelParams::D_f)
      .def_readwrite("B_r", &ModelParams::B_r)
      .def_readwrite("C_r", &ModelParams::C_r)
      .def_readwrite("D_r", &ModelParams::D_r)
      .def_readwrite("c1", &ModelParams::c1)
      .def_readwrite("c2", &ModelParams::c2)
      .def_readwrite("c3", &ModelParams::c3)
      .def_readwrite("c4", &ModelParams::c4)
      .def_readwrite("delta_max", &ModelParams::delta_max)
      .def_readwrite("a_scale", &ModelParams::a_scale);

  py::class_<VehicleModel>(m, "VehicleModel")
      .def(py::init<ModelType, ModelParams>(), py::arg("type"), py::arg("params"))
      .def_property_readonly("nx", &VehicleModel::nx)
      .def("deriv", &VehicleModel::deriv, py::arg("x"), py::arg("u"))
      .def("step_rk4", &VehicleModel::step_rk4, py::arg("x"), py::arg("u"), py::arg("dt"));

  py::class_<PathProjection>(m, "PathProjection")
      .def_readonly("s_star", &PathProjection::s_star)
      .def_readonly("e_lat", &PathProjection::e_lat)
      .def_readonly("alpha_e", &PathProjection::alpha_e)
      .def_readonly("kappa_at", &PathProjection::kappa_at)
      .def_readonly("tangent_angle", &PathProjection::tangent_angle);

  py::class_<Track>(m, "Track")
      .def_static("load", &Track::load, py::arg("path"))
      .def_property_readonly("total_length", &Track::total_length)
      .def_property_readonly("closed", &Track::closed)
      .def("centerline", &Track::centerline, py::arg("s"))
      .def("tangent_angle", &Track::tangent_angle, py::arg("s"))
      .def("curvature_at", &Track::curvature_at, py::arg("s"))
      .def("half_width_at", &Track::half_width_at, py::arg("s"))
      .def("normalize_s", &Track::normalize_s, py::arg("s"))
      .def("project", &Track::project, py::arg("point"), py::arg("psi") = 0.0,
           py::arg("hint") = std::nullopt);

  py::class_<PipelineConfig>(m, "PipelineConfig")
      .def(py::init<>())
      .def_static("load", &PipelineConfig::load, py::arg("path"))
      .def("validate", &PipelineConfig::validate)
      .def_readwrite("track_file", &PipelineConfig::track_file)
      .def_readwrite("params_file", &PipelineConfig::params_file)
      .def_readwrite("plant", &PipelineConfig::plant)
      .def_readwrite("plant_model", &PipelineConfig::plant_model)
      .def_readwrite("plant_dt", &PipelineConfig::plant_dt)
      .def_readwrite("controller", &PipelineConfig::controller)
      .def_readwrite("estimator", &PipelineConfig::estimator)
      .def_readwrite("safety", &PipelineConfig::safety)
      .def_readwrite("controller_hz", &PipelineConfig::controller_hz)
      .def_readwrite("duration_s", &PipelineConfig::duration_s)
      .def_readwrite("lap_target", &PipelineConfig::lap_target)
      .def_readwrite("seed", &PipelineConfig::seed)
      .def_readwrite("start_s", &PipelineConfig::start_s)
      .def_readwrite("start_e_lat", &PipelineConfig::start_e_lat)
      .def_readwrite("start_v", &PipelineConfig::start_v)
      .def_readwrite("pose_rate_hz", &PipelineConfig::pose_rate_hz)
      .def_readwrite("pose_noise_xy", &PipelineConfig::pose_noise_xy)
      .def_readwrite("pose_noise_psi", &PipelineConfig::pose_noise_psi)
      .def_readwrite("pose_latency", &PipelineConfig::pose_latency)
      .def_readwrite("imu_enabled", &PipelineConfig::imu_enabled)
      .def_readwrite("est_cutoff_hz", &PipelineConfig::est_cutoff_hz)
      .def_readwrite("path_pid_drive", &PipelineConfig::path_pid_drive);

  py::class_<LapStats>(m, "LapStats")
      .def_readonly("index", &LapStats::index)
      .def_readonly("time_s", &LapStats::time_s)
      .def_readonly("max_speed", &LapStats::max_speed)
      .def_readonly("max_yaw_rate", &LapStats::max_yaw_rate)
      .def_readonly("violations", &LapStats::violations);

  py::class_<EpisodeLog>(m, "EpisodeLog")
      .def_readonly("laps", &EpisodeLog::laps)
      .def_readonly("aborted", &EpisodeLog::aborted)
      .def_readonly("abort_reason", &EpisodeLog::abort_reason)
      .def_static("columns", &EpisodeLog::columns)
      .def("to_csv", &EpisodeLog::to_csv)
      .def("matrix", &log_matrix,
           "Log rows as a matrix with one column per entry of columns().");

  py::class_<EpisodeSummary>(m, "EpisodeSummary")
      .def_readonly("has_laps", &EpisodeSummary::has_laps)
      .def_readonly("lap_count", &EpisodeSummary::lap_count)
      .def_readonly("lap_time_mean", &EpisodeSummary::lap_time_mean)
      .def_readonly("lap_time_std", &EpisodeSummary::lap_time_std)
      .def_readonly("max_speed", &EpisodeSummary::max_speed)
      .def_readonly("max_yaw_rate", &EpisodeSummary::max_yaw_rate)
      .def_readonly("violations", &EpisodeSummary::violations)
      .def_readonly("aborted", &EpisodeSummary::aborted);

  m.def("summarize", &summarize, py::arg("log"));
  m.def(
      "run_episode",
      [](const PipelineConfig& cfg) {
        py::gil_scoped_release release;
        return run_episode(cfg);
      },
      py::arg("config"), "Run one closed-loop episode against the in-process simulator.");
}
