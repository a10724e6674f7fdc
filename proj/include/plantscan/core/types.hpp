#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>

namespace plantscan {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr std::size_t kBandCount = 25;
using Spectrum = Eigen::Matrix<double, static_cast<int>(kBandCount), 1>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Band centers in nm, evenly spaced over 650..950 inclusive.
inline constexpr std::array<double, kBandCount> band_centers() {
  std::array<double, kBandCount> c{};
  for (std::size_t i = 0; i < kBandCount; ++i) c[i] = 650.0 + 12.5 * static_cast<double>(i);
  return c;
}

/// Index of the band whose center is closest to `nm`.
inline std::size_t nearest_band(double nm) {
  const auto c = band_centers();
  std::size_t best = 0;
  for (std::size_t i = 1; i < kBandCount; ++i)
    if (std::abs(c[i] - nm) < std::abs(c[best] - nm)) best = i;
  return best;
}

/// Rigid pose: world_from_local rotation and translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const { return {rotation.transpose(), -(rotation.transpose() * translation)}; }
  Pose operator*(const Pose& o) const { return {rotation * o.rotation, rotation * o.translation + translation}; }
  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

/// Any unit vector orthogonal to `n`.
inline Vec3 any_orthogonal(const Vec3& n) {
  const Vec3 a = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return (a - a.dot(n) * n).normalized();
}

/// Angle between two unit vectors, robust near 0 and pi.
inline double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace plantscan
