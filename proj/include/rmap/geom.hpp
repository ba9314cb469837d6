#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmap {

using Point3 = Eigen::Vector3d;

inline bool is_finite(const Point3& p) {
  return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z());
}

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

inline double distance(const Point3& a, const Point3& b) {
  return std::sqrt(squared_distance(a, b));
}

enum class Frame { sensor, world };

/// Ordered set of 3D points in meters. Point order is part of the value:
/// it is preserved by serialization and every selection operator in this
/// library breaks distance ties by lowest index, so downstream results are
/// reproducible.
struct PointCloud {
  std::vector<Point3> points;
  Frame frame = Frame::sensor;

  PointCloud() = default;
  explicit PointCloud(Frame f) : frame(f) {}
  PointCloud(std::vector<Point3> pts, Frame f) : points(std::move(pts)), frame(f) {}

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Point3& operator[](std::size_t i) const { return points[i]; }
  Point3& operator[](std::size_t i) { return points[i]; }
};

/// Rigid body pose: rotation stored as a unit quaternion (w, x, y, z).
struct Pose {
  Point3 translation = Point3::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();

  static Pose identity() { return {}; }

  static Pose from_yaw(double yaw_rad, const Point3& t) {
    Pose p;
    p.translation = t;
    p.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(yaw_rad, Point3::UnitZ()));
    return p;
  }

  bool unit_rotation(double tol = 1e-9) const {
    return std::abs(rotation.norm() - 1.0) <= tol;
  }

  Point3 apply(const Point3& p) const { return rotation * p + translation; }

  /// World -> sensor. Assumes a unit quaternion.
  Point3 apply_inverse(const Point3& p) const {
    return rotation.conjugate() * (p - translation);
  }
};

struct Trajectory {
  std::vector<double> timestamps;        // strictly increasing, seconds
  std::vector<Pose> poses;

  std::size_t size() const { return poses.size(); }
  bool empty() const { return poses.empty(); }

  void push_back(double t, const Pose& pose) {
    if (!timestamps.empty() && t <= timestamps.back())
      throw std::invalid_argument("trajectory timestamps must be strictly increasing");
    timestamps.push_back(t);
    poses.push_back(pose);
  }
};

/// Sensor-frame cloud -> world frame: p' = R*p + t.
inline PointCloud transform(const PointCloud& cloud, const Pose& pose) {
  if (!pose.unit_rotation())
    throw std::invalid_argument("transform: pose rotation is not a unit quaternion");
  PointCloud out(Frame::world);
  out.points.reserve(cloud.size());
  for (const Point3& p : cloud.points) out.points.push_back(pose.apply(p));
  return out;
}

inline PointCloud inverse_transform(const PointCloud& cloud, const Pose& pose) {
  if (!pose.unit_rotation())
    throw std::invalid_argument("inverse_transform: pose rotation is not a unit quaternion");
  PointCloud out(Frame::sensor);
  out.points.reserve(cloud.size());
  for (const Point3& p : cloud.points) out.points.push_back(pose.apply_inverse(p));
  return out;
}

namespace detail {

constexpr double kDegToRad = 0.017453292519943295;

/// Field-of-view membership for a sensor-frame point. Boundaries are
/// inclusive: a point exactly on the half-angle or at max_range is kept.
inline bool in_fov(const Point3& p, double azimuth_deg, double elevation_deg,
                   double max_range) {
  const double range = p.norm();
  if (!(range <= max_range)) return false;
  const double az = std::atan2(p.y(), p.x());
  if (std::abs(az) > 0.5 * azimuth_deg * kDegToRad) return false;
  const double el = std::atan2(p.z(), std::hypot(p.x(), p.y()));
  return std::abs(el) <= 0.5 * elevation_deg * kDegToRad;
}

}  // namespace detail

/// Keeps points with |azimuth| <= azimuth_deg/2, |elevation| <= elevation_deg/2
/// and range <= max_range. The cloud must be in the sensor frame.
inline PointCloud fov_filter(const PointCloud& cloud, double azimuth_deg,
                             double elevation_deg,
                             double max_range = std::numeric_limits<double>::infinity()) {
  if (cloud.frame != Frame::sensor)
    throw std::invalid_argument("fov_filter: cloud must be in the sensor frame");
  if (!(azimuth_deg > 0.0 && azimuth_deg <= 360.0))
    throw std::invalid_argument("fov_filter: azimuth must be in (0, 360] degrees");
  PointCloud out(Frame::sensor);
  for (const Point3& p : cloud.points)
    if (detail::in_fov(p, azimuth_deg, elevation_deg, max_range)) out.points.push_back(p);
  return out;
}

/// Index of the point nearest the centroid, ties broken by lexicographically
/// smallest (x, y, z) then lowest index. Used wherever a sampling start must
/// not depend on point order.
inline std::size_t canonical_start_index(const std::vector<Point3>& pts) {
  if (pts.empty()) throw std::invalid_argument("canonical_start_index: empty input");
  Point3 centroid = Point3::Zero();
  for (const Point3& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  std::size_t best = 0;
  double best_d = squared_distance(pts[0], centroid);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double d = squared_distance(pts[i], centroid);
    if (d < best_d) {
      best = i;
      best_d = d;
    } else if (d == best_d) {
      const Point3& a = pts[i];
      const Point3& b = pts[best];
      if (a.x() < b.x() || (a.x() == b.x() && (a.y() < b.y() || (a.y() == b.y() && a.z() < b.z()))))
        best = i;
    }
  }
  return best;
}

}  // namespace rmap
