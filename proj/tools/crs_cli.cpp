// crs command line front end: run experiments, validate configs and tracks,
// plot logs, and serve a remote simulated plant over the UDP bridge.
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crs/bridge.hpp"
#include "crs/harness.hpp"

namespace fs = std::filesystem;
using namespace crs;

namespace {

// exit codes, also documented in the README
constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kConfigError = 2;
constexpr int kAbort = 3;
constexpr int kSolverFailure = 4;

int log_level() {
  static const int level = [] {
    const char* env = std::getenv("CRS_LOG_LEVEL");
    if (!env) return 1;
    const std::string s(env);
    if (s == "error") return 0;
    if (s == "warn") return 1;
    if (s == "info") return 2;
    if (s == "debug") return 3;
    return 1;
  }();
  return level;
}

void log_at(int level, const char* tag, const std::string& msg) {
  if (log_level() >= level) std::cerr << "[" << tag << "] " << msg << "\n";
}
void log_error(const std::string& m) { log_at(0, "error", m); }
void log_info(const std::string& m) { log_at(2, "info", m); }
void log_debug(const std::string& m) { log_at(3, "debug", m); }

struct Args {
  std::map<std::string, std::string> flags;
  std::vector<std::string> overrides;
  std::vector<std::string> positional;
};

Args parse_args(int argc, char** argv, int start) {
  Args a;
  for (int i = start; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--", 0) == 0) {
      const std::string key = arg.substr(2);
      if (i + 1 >= argc) throw std::invalid_argument("flag --" + key + " needs a value");
      const std::string value = argv[++i];
      if (key == "override")
        a.overrides.push_back(value);
      else
        a.flags[key] = value;
    } else {
      a.positional.push_back(arg);
    }
  }
  return a;
}

std::string require_flag(const Args& a, const std::string& key) {
  const auto it = a.flags.find(key);
  if (it == a.flags.end()) throw std::invalid_argument("missing required flag --" + key);
  return it->second;
}

void usage() {
  std::cerr <<
      "usage: crs <command> [flags]\n"
      "  run --config <path> [--seed N] [--out DIR] [--override k=v]...\n"
      "  plot --log <path> --track <path> --out <file.svg>\n"
      "  validate <path>\n"
      "  serve-plant --endpoint <host:port> [--model kinematic|dynamic]\n"
      "              [--params <path>] [--dt s] [--track <path>] [--start-v v]\n"
      "environment: CRS_LOG_LEVEL = error|warn|info|debug\n";
}

// ---------------------------------------------------------------- run

int cmd_run(const Args& a) {
  PipelineConfig cfg;
  try {
    KvDoc doc = KvDoc::load(require_flag(a, "config"));
    for (const std::string& ov : a.overrides) {
      const std::size_t eq = ov.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("override must be key=value, got '" + ov + "'");
      doc.set(ov.substr(0, eq), ov.substr(eq + 1));
    }
    cfg = PipelineConfig::from_doc(doc);
    if (const auto it = a.flags.find("seed"); it != a.flags.end())
      cfg.seed = std::stoull(it->second);
    cfg.validate();
  } catch (const std::exception& ex) {
    log_error(std::string("config: ") + ex.what());
    return kConfigError;
  }

  const fs::path out_dir = a.flags.count("out") ? fs::path(a.flags.at("out")) : fs::path(".");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    log_error("cannot create output directory " + out_dir.string());
    return kConfigError;
  }

  EpisodeLog log;
  try {
    if (cfg.plant == PlantKind::Bridge) {
      BridgePlant plant(Endpoint::parse(cfg.plant_endpoint));
      log = run_episode(cfg, plant);
    } else {
      log = run_episode(cfg);
    }
  } catch (const std::exception& ex) {
    log_error(std::string("episode failed to start: ") + ex.what());
    return kAbort;
  }

  {
    std::ofstream f(out_dir / "log.csv", std::ios::binary);
    f << log.to_csv();
  }
  {
    KvDoc summary = summarize(log).to_doc();
    if (log.aborted) summary.set("abort_reason", log.abort_reason);
    summary.save((out_dir / "summary.txt").string());
  }
  log_info("wrote " + (out_dir / "log.csv").string() + " (" + std::to_string(log.rows.size()) +
           " rows, " + std::to_string(log.laps.size()) + " laps)");

  if (log.aborted) {
    log_error("episode aborted: " + log.abort_reason);
    return kAbort;
  }
  if (cfg.controller == ControllerKind::TrackingMpc || cfg.controller == ControllerKind::Mpcc) {
    std::size_t failed = 0;
    for (const LogRow& r : log.rows)
      if (r.solver_status == SolveStatus::Infeasible) ++failed;
    if (!log.rows.empty() && failed * 2 > log.rows.size()) {
      log_error("solver hard failure: " + std::to_string(failed) + "/" +
                std::to_string(log.rows.size()) + " infeasible ticks");
      return kSolverFailure;
    }
  }
  return kOk;
}

// ---------------------------------------------------------------- plot

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

Csv read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  Csv csv;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (first) {
      csv.header = fields;
      first = false;
    } else if (!fields.empty()) {
      csv.rows.push_back(fields);
    }
  }
  return csv;
}

std::string svg_poly(const std::vector<Eigen::Vector2d>& pts, const std::string& style,
                     double ox, double oy, double scale, double height) {
  std::ostringstream out;
  out << "<polyline fill=\"none\" " << style << " points=\"";
  for (const auto& p : pts)
    out << format_double((p.x() - ox) * scale) << ","
        << format_double(height - (p.y() - oy) * scale) << " ";
  out << "\"/>\n";
  return out.str();
}

int cmd_plot(const Args& a) {
  std::string log_path, track_path, out_path;
  Csv csv;
  std::optional<Track> loaded;
  try {
    log_path = require_flag(a, "log");
    track_path = require_flag(a, "track");
    out_path = require_flag(a, "out");
    csv = read_csv(log_path);
    loaded = Track::load(track_path);
  } catch (const std::exception& ex) {
    log_error(ex.what());
    return kConfigError;
  }
  const Track& track = *loaded;
  int xi = -1, yi = -1;
  for (std::size_t i = 0; i < csv.header.size(); ++i) {
    if (csv.header[i] == "x") xi = static_cast<int>(i);
    if (csv.header[i] == "y") yi = static_cast<int>(i);
  }
  if (xi < 0 || yi < 0) {
    log_error("log has no x/y columns: " + log_path);
    return kConfigError;
  }
  if (csv.rows.empty()) {
    log_error("log has no trajectory rows: " + log_path);
    return kConfigError;
  }

  std::vector<Eigen::Vector2d> traj;
  for (const auto& row : csv.rows)
    traj.emplace_back(std::stod(row[xi]), std::stod(row[yi]));

  // centerline and offset boundaries sampled at the waypoints
  std::vector<Eigen::Vector2d> center, left, right;
  const auto& wps = track.waypoints();
  const auto& ss = track.arc_lengths();
  for (std::size_t i = 0; i < wps.size(); ++i) {
    const double phi = track.tangent_angle(ss[i]);
    const Eigen::Vector2d n(-std::sin(phi), std::cos(phi));
    const double hw = track.half_width_at(ss[i]);
    center.push_back(wps[i]);
    left.push_back(wps[i] + hw * n);
    right.push_back(wps[i] - hw * n);
  }

  double min_x = 1e30, min_y = 1e30, max_x = -1e30, max_y = -1e30;
  for (const auto* pts : {&left, &right, &traj})
    for (const auto& p : *pts) {
      min_x = std::min(min_x, p.x());
      max_x = std::max(max_x, p.x());
      min_y = std::min(min_y, p.y());
      max_y = std::max(max_y, p.y());
    }
  const double margin = 0.05 * std::max(max_x - min_x, max_y - min_y) + 1e-9;
  min_x -= margin;
  min_y -= margin;
  max_x += margin;
  max_y += margin;
  const double scale = 800.0 / (max_x - min_x);
  const double height = (max_y - min_y) * scale;

  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    log_error("cannot write " + out_path);
    return kConfigError;
  }
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\""
      << format_double(height) << "\">\n";
  out << svg_poly(left, "stroke=\"black\" stroke-width=\"2\"", min_x, min_y, scale, height);
  out << svg_poly(right, "stroke=\"black\" stroke-width=\"2\"", min_x, min_y, scale, height);
  out << svg_poly(center, "stroke=\"grey\" stroke-width=\"1\" stroke-dasharray=\"6,6\"", min_x,
                  min_y, scale, height);
  out << svg_poly(traj, "stroke=\"#1f77b4\" stroke-width=\"1.5\"", min_x, min_y, scale, height);
  out << "</svg>\n";
  out.close();

  // sidecar point set, fields copied verbatim from the log
  fs::path csv_path(out_path);
  csv_path.replace_extension(".csv");
  std::ofstream pts(csv_path, std::ios::binary);
  pts << "x,y\n";
  for (const auto& row : csv.rows) pts << row[xi] << "," << row[yi] << "\n";
  log_info("wrote " + out_path + " and " + csv_path.string());
  return kOk;
}

// ---------------------------------------------------------------- validate

int cmd_validate(const Args& a) {
  if (a.positional.empty()) {
    log_error("validate needs a file path");
    return kUsage;
  }
  const std::string path = a.positional[0];
  std::vector<std::string> findings;
  KvDoc doc;
  try {
    doc = KvDoc::load(path);
  } catch (const std::exception& ex) {
    std::cout << path << ": 1 finding\n  " << ex.what() << "\n";
    return kConfigError;
  }

  const std::string format = doc.get_str("format", doc.get_str("schema", ""));
  if (format == "crs-track-v1") {
    // waypoint-level checks first so the diagnostics carry an index
    int index = 0;
    Eigen::Vector2d prev;
    bool have_prev = false;
    for (const auto& [key, value] : doc.entries()) {
      if (key != "waypoint") continue;
      ++index;
      std::istringstream ss(value);
      double x, y, hw;
      if (!(ss >> x >> y >> hw)) {
        findings.push_back("waypoint " + std::to_string(index) + ": expected 'x y half_width'");
        continue;
      }
      if (!(hw > 0))
        findings.push_back("waypoint " + std::to_string(index) + ": half width must be > 0");
      if (have_prev && (Eigen::Vector2d(x, y) - prev).norm() < 1e-12)
        findings.push_back("waypoint " + std::to_string(index) +
                           ": arc length not strictly increasing (duplicate point)");
      prev = Eigen::Vector2d(x, y);
      have_prev = true;
    }
    if (findings.empty()) {
      try {
        Track::from_doc(doc);
      } catch (const std::exception& ex) {
        findings.push_back(ex.what());
      }
    }
  } else if (format == "crs-config-v1") {
    try {
      PipelineConfig::from_doc(doc).validate();
    } catch (const std::exception& ex) {
      findings.push_back(ex.what());
    }
  } else if (format == "crs-params-v1") {
    try {
      ModelParams::from_doc(doc).validate();
    } catch (const std::exception& ex) {
      findings.push_back(ex.what());
    }
  } else {
    findings.push_back("unknown format '" + format + "'");
  }

  if (findings.empty()) {
    std::cout << path << ": ok (" << format << ")\n";
    return kOk;
  }
  std::cout << path << ": " << findings.size() << " finding"
            << (findings.size() == 1 ? "" : "s") << "\n";
  for (const auto& f : findings) std::cout << "  " << f << "\n";
  return kConfigError;
}

// ---------------------------------------------------------------- serve-plant

std::atomic<PlantServer*> g_server{nullptr};

void handle_signal(int) {
  if (PlantServer* s = g_server.load()) s->stop();
}

int cmd_serve_plant(const Args& a) {
  PlantServerConfig cfg;
  Endpoint ep;
  try {
    ep = Endpoint::parse(require_flag(a, "endpoint"));
    if (const auto it = a.flags.find("model"); it != a.flags.end())
      cfg.model = model_type_from_string(it->second);
    if (const auto it = a.flags.find("params"); it != a.flags.end())
      cfg.params = ModelParams::load(it->second);
    if (const auto it = a.flags.find("dt"); it != a.flags.end()) cfg.dt = std::stod(it->second);
    const double start_v =
        a.flags.count("start-v") ? std::stod(a.flags.at("start-v")) : 0.0;
    if (const auto it = a.flags.find("track"); it != a.flags.end()) {
      const Track track = Track::load(it->second);
      const TrackRef r = track.ref_at(0.0);
      cfg.x0 = Vec::Zero(cfg.model == ModelType::Dynamic ? 6 : 4);
      cfg.x0(0) = r.point.x();
      cfg.x0(1) = r.point.y();
      cfg.x0(2) = r.tangent_angle;
      cfg.x0(3) = start_v;
    }
  } catch (const std::exception& ex) {
    log_error(ex.what());
    return kConfigError;
  }

  try {
    PlantServer server(ep, cfg);
    g_server = &server;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::cout << "serving plant on " << ep.host << ":" << server.port() << "\n";
    server.run();
    g_server = nullptr;
  } catch (const std::exception& ex) {
    log_error(ex.what());
    return kConfigError;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    usage();
    return kUsage;
  }
  const std::string cmd = argv[1];
  try {
    const Args a = parse_args(argc, argv, 2);
    if (cmd == "run") return cmd_run(a);
    if (cmd == "plot") return cmd_plot(a);
    if (cmd == "validate") return cmd_validate(a);
    if (cmd == "serve-plant") return cmd_serve_plant(a);
  } catch (const std::exception& ex) {
    log_error(ex.what());
    return kUsage;
  }
  usage();
  return kUsage;
}
