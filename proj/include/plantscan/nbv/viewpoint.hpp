#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/types.hpp>

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace plantscan {

enum class ViewKind { FVP, VVP, AVP, Reference };

constexpr std::string_view to_string(ViewKind k) {
  switch (k) {
    case ViewKind::FVP: return "FVP";
    case ViewKind::VVP: return "VVP";
    case ViewKind::AVP: return "AVP";
    case ViewKind::Reference: return "REF";
  }
  return "?";
}

inline ViewKind parse_view_kind(std::string_view s) {
  if (s == "FVP") return ViewKind::FVP;
  if (s == "VVP") return ViewKind::VVP;
  if (s == "AVP") return ViewKind::AVP;
  if (s == "REF") return ViewKind::Reference;
  fail(Errc::IoError, "unknown viewpoint kind '" + std::string(s) + "'");
}

/// Camera pose looking along its frame's z-axis at a target `sight_distance` away.
/// Frame columns are the camera x, y, z axes in world coordinates.
struct Viewpoint {
  int id = 0;
  ViewKind kind = ViewKind::FVP;
  Vec3 position = Vec3::Zero();
  Mat3 frame = Mat3::Identity();
  double sight_distance = 0.5;

  Vec3 view_direction() const { return frame.col(2); }
  Vec3 target() const { return position + sight_distance * frame.col(2); }
  /// world_from_camera
  Pose pose() const { return {frame, position}; }
  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(frame).normalized(); }
};

/// Orientation rule for a camera at unit direction `dir` from a hemisphere
/// center: z looks back at the center, x is the unit tangent of the
/// viewpoint's meridian (pointing away from the pole), and y completes a
/// right-handed frame. Within 0.5 degrees of the pole the meridian is
/// undefined and `ref_meridian` is used instead.
inline Mat3 meridian_frame(const Vec3& dir, const Vec3& main_direction, const Vec3& ref_meridian) {
  const Vec3 d = dir.normalized();
  const Vec3 m = main_direction.normalized();
  const Vec3 z = -d;
  Vec3 x = d.dot(m) * d - m;
  if (angle_between(d, m) < deg2rad(0.5) || x.norm() < 1e-12) x = ref_meridian;
  x -= x.dot(z) * z;
  if (x.norm() < 1e-12) x = any_orthogonal(z);
  x.normalize();
  Mat3 f;
  f.col(0) = x;
  f.col(1) = z.cross(x);
  f.col(2) = z;
  return f;
}

inline void write_viewpoints_csv(std::ostream& os, const std::vector<Viewpoint>& vps) {
  os << "id,kind,x,y,z,qw,qx,qy,qz,sight_distance\n";
  os << std::setprecision(17);
  for (const auto& v : vps) {
    const auto q = v.quaternion();
    os << v.id << ',' << to_string(v.kind) << ',' << v.position.x() << ',' << v.position.y() << ','
       << v.position.z() << ',' << q.w() << ',' << q.x() << ',' << q.y() << ',' << q.z() << ','
       << v.sight_distance << '\n';
  }
}

inline std::vector<Viewpoint> read_viewpoints_csv(std::istream& is) {
  std::vector<Viewpoint> out;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    require(cells.size() == 10, Errc::IoError, "viewpoint CSV row needs 10 columns");
    Viewpoint v;
    v.id = std::stoi(cells[0]);
    v.kind = parse_view_kind(cells[1]);
    v.position = Vec3(std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4]));
    const Eigen::Quaterniond q(std::stod(cells[5]), std::stod(cells[6]), std::stod(cells[7]), std::stod(cells[8]));
    v.frame = q.normalized().toRotationMatrix();
    v.sight_distance = std::stod(cells[9]);
    out.push_back(v);
  }
  return out;
}

}  // namespace plantscan
