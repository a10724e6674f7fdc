#pragma once

#include <plantscan/core/types.hpp>
#include <plantscan/planner/kinematics.hpp>

#include <array>
#include <cmath>
#include <unordered_map>
#include <vector>

namespace plantscan::testing {

// Forward kinematics from explicit 4x4 DH matrices, independent of the
// library's Pose composition.
inline std::array<Mat4, 7> oracle_frames(const KinematicChain& chain, const JointConfig& q) {
  std::array<Mat4, 7> f;
  f[0] = Mat4::Identity();
  f[0].topLeftCorner<3, 3>() = chain.base.rotation;
  f[0].topRightCorner<3, 1>() = chain.base.translation;
  for (int i = 0; i < 6; ++i) {
    const auto& j = chain.joints[i];
    const double th = q[i] + j.theta_offset;
    Mat4 rz = Mat4::Identity(), tz = Mat4::Identity(), tx = Mat4::Identity(), rx = Mat4::Identity();
    rz(0, 0) = std::cos(th);
    rz(0, 1) = -std::sin(th);
    rz(1, 0) = std::sin(th);
    rz(1, 1) = std::cos(th);
    tz(2, 3) = j.d;
    tx(0, 3) = j.a;
    rx(1, 1) = std::cos(j.alpha);
    rx(1, 2) = -std::sin(j.alpha);
    rx(2, 1) = std::sin(j.alpha);
    rx(2, 2) = std::cos(j.alpha);
    f[i + 1] = f[i] * rz * tz * tx * rx;
  }
  return f;
}

// Dense centerline points of the links and the camera segment.
inline std::vector<Vec3> oracle_centerline(const KinematicChain& chain, const JointConfig& q, const Pose& hand_eye,
                                           double spacing) {
  const auto f = oracle_frames(chain, q);
  Mat4 cam = Mat4::Identity();
  cam.topLeftCorner<3, 3>() = hand_eye.rotation;
  cam.topRightCorner<3, 1>() = hand_eye.translation;
  std::vector<Vec3> joints;
  for (const auto& m : f) joints.push_back(m.topRightCorner<3, 1>());
  joints.push_back((f[6] * cam).topRightCorner<3, 1>());
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i + 1 < joints.size(); ++i) {
    const Vec3 a = joints[i], b = joints[i + 1];
    const int n = std::max(1, static_cast<int>(std::ceil((b - a).norm() / spacing)));
    for (int k = 0; k <= n; ++k) pts.push_back(a + (b - a) * (static_cast<double>(k) / n));
  }
  return pts;
}

// Exact "any scene point within radius" queries via a uniform hash grid.
class NearPointOracle {
 public:
  NearPointOracle(const std::vector<Vec3>& pts, double radius) : pts_(pts), r_(radius) {
    for (std::size_t i = 0; i < pts.size(); ++i) cells_[key(pts[i])].push_back(i);
  }

  bool near(const Vec3& q) const {
    const auto c = cell(q);
    for (long dx = -1; dx <= 1; ++dx)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find(pack(c[0] + dx, c[1] + dy, c[2] + dz));
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second)
            if ((pts_[i] - q).norm() < r_) return true;
        }
    return false;
  }

 private:
  std::array<long, 3> cell(const Vec3& p) const {
    return {static_cast<long>(std::floor(p.x() / r_)), static_cast<long>(std::floor(p.y() / r_)),
            static_cast<long>(std::floor(p.z() / r_))};
  }
  static long long pack(long x, long y, long z) {
    return ((static_cast<long long>(x) + 100000) * 200003LL + (y + 100000)) * 200003LL + (z + 100000);
  }
  long long key(const Vec3& p) const {
    const auto c = cell(p);
    return pack(c[0], c[1], c[2]);
  }

  const std::vector<Vec3>& pts_;
  double r_;
  std::unordered_map<long long, std::vector<std::size_t>> cells_;
};

// Every configuration of the path's interpolation at <= max_step per joint
// keeps the link capsules (centerline within `radius`) clear of the scene.
inline bool path_is_collision_free(const std::vector<JointConfig>& path, const KinematicChain& chain,
                                   const Pose& hand_eye, const NearPointOracle& scene, double spacing,
                                   double max_step = deg2rad(1.0)) {
  auto config_ok = [&](const JointConfig& q) {
    for (const Vec3& p : oracle_centerline(chain, q, hand_eye, spacing))
      if (scene.near(p)) return false;
    return true;
  };
  if (path.empty() || !config_ok(path.front())) return false;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const JointConfig a = path[i], b = path[i + 1];
    const double span = (b - a).cwiseAbs().maxCoeff();
    const int n = std::max(1, static_cast<int>(std::ceil(span / max_step - 1e-12)));
    for (int k = 1; k <= n; ++k)
      if (!config_ok(a + (b - a) * (static_cast<double>(k) / n))) return false;
  }
  return true;
}

}  // namespace plantscan::testing
