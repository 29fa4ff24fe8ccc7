#include "crs/track.hpp"

#include <algorithm>
#include <cmath>

#include "crs/models.hpp"  // wrap_angle

namespace crs {

namespace {
constexpr double kClosureTol = 1e-9;
constexpr double kHintWindow = 1.0;  // +-1 m local search window
}  // namespace

Track Track::from_waypoints(std::vector<Eigen::Vector2d> pts, std::vector<double> half_widths,
                            bool closed) {
  if (pts.size() < 4) throw ParseError("track: need at least 4 waypoints");
  if (half_widths.size() == 1) half_widths.assign(pts.size(), half_widths[0]);
  if (half_widths.size() != pts.size())
    throw ParseError("track: half_width count must be 1 or match waypoints");
  if (closed) {
    const double gap = (pts.back() - pts.front()).norm();
    if (gap > kClosureTol && gap > 1e-6) {
      pts.push_back(pts.front());
      half_widths.push_back(half_widths.front());
    } else {
      pts.back() = pts.front();  // snap exact
    }
  }
  Track t;
  t.pts_ = std::move(pts);
  t.half_width_ = std::move(half_widths);
  t.closed_ = closed;
  t.build();
  return t;
}

void Track::build() {
  const std::size_t n = pts_.size();
  s_.assign(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const double d = (pts_[i] - pts_[i - 1]).norm();
    if (d < 1e-12) throw ParseError("track: repeated waypoint at index " + std::to_string(i));
    s_[i] = s_[i - 1] + d;
  }
  if (s_.back() <= 0) throw ParseError("track: zero total length");
  for (double w : half_width_)
    if (!(w > 0)) throw ParseError("track: half_width must be positive");

  // segment headings
  const std::size_t nseg = n - 1;
  std::vector<double> ang(nseg), len(nseg);
  for (std::size_t i = 0; i < nseg; ++i) {
    const Eigen::Vector2d d = pts_[i + 1] - pts_[i];
    ang[i] = std::atan2(d.y(), d.x());
    len[i] = d.norm();
  }

  // finite-difference signed curvature at each waypoint
  std::vector<double> raw(n, 0.0);
  for (std::size_t i = 1; i < nseg; ++i) {
    const double da = wrap_angle(ang[i] - ang[i - 1]);
    raw[i] = da / (0.5 * (len[i - 1] + len[i]));
  }
  if (closed_) {
    const double da = wrap_angle(ang[0] - ang[nseg - 1]);
    raw[0] = da / (0.5 * (len[nseg - 1] + len[0]));
    raw[n - 1] = raw[0];
  } else {
    raw[0] = raw[1];
    raw[n - 1] = raw[nseg - 1];
  }

  // 5-point moving average, wrap-aware on closed tracks
  kappa_.assign(n, 0.0);
  const std::size_t nu = closed_ ? nseg : n;  // unique waypoints
  for (std::size_t i = 0; i < nu; ++i) {
    double sum = 0;
    int cnt = 0;
    for (int k = -2; k <= 2; ++k) {
      long j = static_cast<long>(i) + k;
      if (closed_) {
        j = ((j % static_cast<long>(nu)) + static_cast<long>(nu)) % static_cast<long>(nu);
      } else if (j < 0 || j >= static_cast<long>(nu)) {
        continue;
      }
      sum += raw[static_cast<std::size_t>(j)];
      ++cnt;
    }
    kappa_[i] = sum / cnt;
  }
  if (closed_) kappa_[n - 1] = kappa_[0];
}

double Track::normalize_s(double s) const {
  const double L = total_length();
  if (closed_) {
    s = std::fmod(s, L);
    if (s < 0) s += L;
    return s;
  }
  return std::clamp(s, 0.0, L);
}

namespace {
// index of the segment containing arc length s (s assumed in [0, L])
std::size_t segment_index(const std::vector<double>& s_arr, double s) {
  auto it = std::upper_bound(s_arr.begin(), s_arr.end(), s);
  std::size_t i = static_cast<std::size_t>(it - s_arr.begin());
  if (i == 0) return 0;
  if (i >= s_arr.size()) return s_arr.size() - 2;
  return i - 1;
}
}  // namespace

Eigen::Vector2d Track::centerline(double s) const {
  s = normalize_s(s);
  const std::size_t i = segment_index(s_, s);
  const double t = (s - s_[i]) / (s_[i + 1] - s_[i]);
  return pts_[i] + t * (pts_[i + 1] - pts_[i]);
}

double Track::tangent_angle(double s) const {
  s = normalize_s(s);
  const std::size_t i = segment_index(s_, s);
  const Eigen::Vector2d d = pts_[i + 1] - pts_[i];
  return std::atan2(d.y(), d.x());
}

namespace {
double lerp_by_s(const std::vector<double>& s_arr, const std::vector<double>& vals, double s) {
  const std::size_t i = segment_index(s_arr, s);
  const double t = (s - s_arr[i]) / (s_arr[i + 1] - s_arr[i]);
  return vals[i] + t * (vals[i + 1] - vals[i]);
}
}  // namespace

double Track::curvature_at(double s) const { return lerp_by_s(s_, kappa_, normalize_s(s)); }

double Track::half_width_at(double s) const { return lerp_by_s(s_, half_width_, normalize_s(s)); }

double Track::avg_curvature(double s, double lookahead) const {
  if (!(lookahead > 0)) throw std::invalid_argument("avg_curvature: lookahead must be positive");
  constexpr int kSamples = 64;
  double acc = 0;
  for (int k = 0; k < kSamples; ++k) {
    const double sk = s + lookahead * (k + 0.5) / kSamples;
    acc += std::abs(curvature_at(sk));
  }
  return acc / kSamples;
}

TrackRef Track::ref_at(double s) const {
  s = normalize_s(s);
  return {centerline(s), tangent_angle(s), curvature_at(s), half_width_at(s)};
}

PathProjection Track::project(const Eigen::Vector2d& point, double psi,
                              std::optional<double> hint) const {
  const std::size_t nseg = pts_.size() - 1;
  double best_d2 = std::numeric_limits<double>::infinity();
  double best_s = 0;
  Eigen::Vector2d best_pt = pts_[0];
  std::size_t best_i = 0;

  double lo = 0, hi = 0;
  const bool windowed = hint.has_value();
  if (windowed) {
    lo = *hint - kHintWindow;
    hi = *hint + kHintWindow;
  }

  for (std::size_t i = 0; i < nseg; ++i) {
    if (windowed) {
      bool in_window = s_[i + 1] >= lo && s_[i] <= hi;
      if (!in_window && closed_) {
        const double L = total_length();
        in_window = (s_[i + 1] >= lo + L && s_[i] <= hi + L) ||
                    (s_[i + 1] >= lo - L && s_[i] <= hi - L);
      }
      if (!in_window) continue;
    }
    const Eigen::Vector2d a = pts_[i];
    const Eigen::Vector2d d = pts_[i + 1] - a;
    const double len2 = d.squaredNorm();
    double t = (point - a).dot(d) / len2;
    t = std::clamp(t, 0.0, 1.0);
    const Eigen::Vector2d q = a + t * d;
    const double d2 = (point - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best_s = s_[i] + t * std::sqrt(len2);
      best_pt = q;
      best_i = i;
    }
  }

  PathProjection proj;
  proj.s_star = closed_ ? normalize_s(best_s) : best_s;
  const Eigen::Vector2d seg = pts_[best_i + 1] - pts_[best_i];
  const Eigen::Vector2d tangent = seg.normalized();
  const Eigen::Vector2d off = point - best_pt;
  proj.e_lat = tangent.x() * off.y() - tangent.y() * off.x();
  proj.tangent_angle = std::atan2(seg.y(), seg.x());
  proj.alpha_e = wrap_angle(psi - proj.tangent_angle);
  proj.kappa_at = curvature_at(proj.s_star);
  return proj;
}

std::pair<double, double> Track::contouring_errors(const Eigen::Vector2d& point,
                                                   double theta) const {
  const double s = normalize_s(theta);
  const Eigen::Vector2d ref = centerline(s);
  const double phi = tangent_angle(s);
  const Eigen::Vector2d d = point - ref;
  const double eps_l = std::cos(phi) * d.x() + std::sin(phi) * d.y();
  const double eps_c = -std::sin(phi) * d.x() + std::cos(phi) * d.y();
  return {eps_l, eps_c};
}

Track Track::from_doc(const KvDoc& doc) {
  if (doc.get_str("format", "") != "crs-track-v1")
    throw ParseError("track: missing or unsupported format header");
  const bool closed = doc.get_bool("closed");
  const double default_hw = doc.get_num("half_width", 0.0);
  std::vector<Eigen::Vector2d> pts;
  std::vector<double> hws;
  for (const auto& [k, v] : doc.entries()) {
    if (k != "waypoint") continue;
    double x = 0, y = 0, hw = default_hw;
    const int got = std::sscanf(v.c_str(), "%lf %lf %lf", &x, &y, &hw);
    if (got < 2) throw ParseError("track: bad waypoint line: " + v);
    if (got < 3 && default_hw <= 0)
      throw ParseError("track: waypoint without half_width and no default given");
    pts.emplace_back(x, y);
    hws.push_back(hw);
  }
  return from_waypoints(std::move(pts), std::move(hws), closed);
}

Track Track::load(const std::string& path) { return from_doc(KvDoc::load(path)); }

KvDoc Track::to_doc() const {
  KvDoc d;
  d.set("format", std::string("crs-track-v1"));
  d.set("closed", closed_);
  // waypoint keys repeat, which KvDoc::set would dedup; go through parse
  std::string body = d.serialize();
  for (std::size_t i = 0; i < pts_.size(); ++i) {
    body += "waypoint: " + format_double(pts_[i].x()) + " " + format_double(pts_[i].y()) + " " +
            format_double(half_width_[i]) + "\n";
  }
  return KvDoc::parse(body);
}

}  // namespace crs
