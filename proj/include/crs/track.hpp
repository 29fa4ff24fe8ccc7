#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "crs/config.hpp"

namespace crs {

/// Closest-point decomposition of a query point relative to the track.
struct PathProjection {
  double s_star = 0;         // arc length of the closest centerline point [m]
  double e_lat = 0;          // signed lateral offset, positive left of travel [m]
  double alpha_e = 0;        // heading error vs path tangent, (-pi, pi]
  double kappa_at = 0;       // centerline curvature at s_star [1/m]
  double tangent_angle = 0;  // path tangent angle at s_star [rad]
};

/// Reference point on the centerline at a given progress, used by the
/// contouring cost linearization.
struct TrackRef {
  Eigen::Vector2d point;
  double tangent_angle;
  double kappa;
  double half_width;
};

/// Arc-length parameterized centerline: piecewise-linear waypoints with
/// finite-difference curvature (5-point smoothed) and per-waypoint width.
/// Immutable after load; all queries are const.
class Track {
 public:
  static Track load(const std::string& path);
  static Track from_doc(const KvDoc& doc);
  /// Build from raw waypoints (closing point included for closed tracks).
  static Track from_waypoints(std::vector<Eigen::Vector2d> pts, std::vector<double> half_widths,
                              bool closed);

  double total_length() const { return s_.back(); }
  bool closed() const { return closed_; }
  std::size_t waypoint_count() const { return pts_.size(); }
  const std::vector<Eigen::Vector2d>& waypoints() const { return pts_; }
  const std::vector<double>& arc_lengths() const { return s_; }
  const std::vector<double>& curvatures() const { return kappa_; }

  Eigen::Vector2d centerline(double s) const;
  double tangent_angle(double s) const;
  double curvature_at(double s) const;
  double avg_curvature(double s, double lookahead) const;
  double half_width_at(double s) const;
  TrackRef ref_at(double s) const;

  /// Closest-point projection. Global search without hint, windowed
  /// (+-1 m of arc length) with hint. psi fills alpha_e.
  PathProjection project(const Eigen::Vector2d& point, double psi = 0.0,
                         std::optional<double> hint = std::nullopt) const;

  /// Lag and contouring error of `point` relative to the reference point at
  /// progress theta (lag along tangent, contouring across, positive left).
  std::pair<double, double> contouring_errors(const Eigen::Vector2d& point, double theta) const;

  /// Wraps s into [0, total_length) for closed tracks, clamps for open ones.
  double normalize_s(double s) const;

  KvDoc to_doc() const;

 private:
  Track() = default;
  void build();

  std::vector<Eigen::Vector2d> pts_;
  std::vector<double> half_width_;
  std::vector<double> s_;      // cumulative arc length per waypoint
  std::vector<double> kappa_;  // signed curvature per waypoint
  bool closed_ = false;
};

}  // namespace crs
