#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/types.hpp>

#include <cmath>
#include <optional>

namespace plantscan {

/// Pinhole intrinsics. Pixel (u, v) has its center at image coordinates
/// (u, v); camera x points right, y down, z forward.
struct CameraIntrinsics {
  int width = 0;
  int height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;

  void validate() const {
    require(width > 0 && height > 0 && fx > 0 && fy > 0 && std::isfinite(cx) && std::isfinite(cy),
            Errc::Precondition, "invalid pinhole intrinsics");
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }

  /// Ray through pixel (u, v) with unit depth (z = 1) in the camera frame.
  Vec3 ray(double u, double v) const { return Vec3((u - cx) / fx, (v - cy) / fy, 1.0); }

  /// Image coordinates of a camera-frame point in front of the camera.
  std::optional<Eigen::Vector2d> project(const Vec3& p) const {
    if (p.z() <= 0) return std::nullopt;
    return Eigen::Vector2d(fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy);
  }

  static CameraIntrinsics from_fov(int width, int height, double hfov_deg, double vfov_deg) {
    CameraIntrinsics k;
    k.width = width;
    k.height = height;
    k.fx = (width / 2.0) / std::tan(deg2rad(hfov_deg) / 2);
    k.fy = (height / 2.0) / std::tan(deg2rad(vfov_deg) / 2);
    k.cx = (width - 1) / 2.0;
    k.cy = (height - 1) / 2.0;
    return k;
  }
};

/// Snapshot multispectral camera: square 16 degree field of view.
inline CameraIntrinsics ms_camera(int pixels = 128) { return CameraIntrinsics::from_fov(pixels, pixels, 16.0, 16.0); }

/// Depth camera with a 75 x 65 degree field of view.
inline CameraIntrinsics rgbd_camera(int width = 320, int height = 256) {
  return CameraIntrinsics::from_fov(width, height, 75.0, 65.0);
}

}  // namespace plantscan
