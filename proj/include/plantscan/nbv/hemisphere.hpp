#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/nbv/viewpoint.hpp>
#include <plantscan/pointcloud/convex_hull.hpp>
#include <plantscan/pointcloud/kdtree.hpp>
#include <plantscan/pointcloud/point_cloud.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

namespace plantscan {

/// All viewing directions within 90 degrees of `main_direction` around a
/// target center, discretized into (polar, azimuth) bins of equal angular size.
/// Azimuth is measured from `ref_meridian`.
class DirectionalHemisphere {
 public:
  DirectionalHemisphere(const Vec3& center, const Vec3& main_direction, const Vec3& ref_hint, double radius,
                        double bin_deg = 2.0)
      : center_(center), radius_(radius) {
    require(bin_deg > 0 && bin_deg <= 90, Errc::Precondition, "bin size must be in (0, 90] degrees");
    const Vec3 z = main_direction.normalized();
    Vec3 x = ref_hint - ref_hint.dot(z) * z;
    x = x.norm() < 1e-9 ? any_orthogonal(z) : Vec3(x.normalized());
    local_.col(0) = x;
    local_.col(1) = z.cross(x);
    local_.col(2) = z;
    polar_bins_ = std::max(1, static_cast<int>(std::lround(90.0 / bin_deg)));
    azimuth_bins_ = std::max(1, static_cast<int>(std::lround(360.0 / bin_deg)));
    polar_step_ = kPi / 2 / polar_bins_;
    azimuth_step_ = kTwoPi / azimuth_bins_;
    dirs_.resize(bin_count());
    for (std::size_t b = 0; b < dirs_.size(); ++b) dirs_[b] = bin_direction(b);
  }

  const Vec3& center() const { return center_; }
  Vec3 main_direction() const { return local_.col(2); }
  Vec3 ref_meridian() const { return local_.col(0); }
  /// Columns: reference meridian, its right-handed complement, main direction.
  const Mat3& local_frame() const { return local_; }
  double radius() const { return radius_; }
  int polar_bins() const { return polar_bins_; }
  int azimuth_bins() const { return azimuth_bins_; }
  std::size_t bin_count() const { return static_cast<std::size_t>(polar_bins_) * azimuth_bins_; }
  double polar_step() const { return polar_step_; }
  /// Bin center directions, indexed by bin.
  const std::vector<Vec3>& bin_directions() const { return dirs_; }

  bool same_grid(const DirectionalHemisphere& o) const {
    return polar_bins_ == o.polar_bins_ && azimuth_bins_ == o.azimuth_bins_;
  }

  Vec3 direction(double polar, double azimuth) const {
    const Vec3 local(std::sin(polar) * std::cos(azimuth), std::sin(polar) * std::sin(azimuth), std::cos(polar));
    return local_ * local;
  }

  /// Bin center direction in world coordinates.
  Vec3 bin_direction(std::size_t bin) const {
    const int ip = static_cast<int>(bin) / azimuth_bins_;
    const int ia = static_cast<int>(bin) % azimuth_bins_;
    return direction((ip + 0.5) * polar_step_, (ia + 0.5) * azimuth_step_);
  }

  /// (polar, azimuth) of a world direction in hemisphere-local angles.
  std::pair<double, double> angles(const Vec3& dir) const {
    const Vec3 l = local_.transpose() * dir.normalized();
    double az = std::atan2(l.y(), l.x());
    if (az < 0) az += kTwoPi;
    return {std::atan2(std::hypot(l.x(), l.y()), l.z()), az};
  }

  std::optional<std::size_t> bin_of(const Vec3& dir) const {
    const auto [polar, az] = angles(dir);
    if (polar > kPi / 2 + 1e-12) return std::nullopt;
    const int ip = std::min(polar_bins_ - 1, static_cast<int>(polar / polar_step_));
    const int ia = std::min(azimuth_bins_ - 1, static_cast<int>(az / azimuth_step_));
    return static_cast<std::size_t>(ip) * azimuth_bins_ + ia;
  }

  /// Camera at `dir` on this hemisphere, oriented by the meridian rule.
  Viewpoint viewpoint(const Vec3& dir, ViewKind kind = ViewKind::AVP, int id = 0) const {
    Viewpoint v;
    v.id = id;
    v.kind = kind;
    v.position = center_ + radius_ * dir.normalized();
    v.frame = meridian_frame(dir.normalized(), main_direction(), ref_meridian());
    v.sight_distance = radius_;
    return v;
  }

 private:
  Vec3 center_;
  Mat3 local_ = Mat3::Identity();
  double radius_;
  int polar_bins_ = 45;
  int azimuth_bins_ = 180;
  double polar_step_ = 0;
  double azimuth_step_ = 0;
  std::vector<Vec3> dirs_;
};

/// Per-bin occupancy over a hemisphere grid.
struct ProjectionMask {
  int polar_bins = 0;
  int azimuth_bins = 0;
  std::vector<char> bins;

  static ProjectionMask empty_for(const DirectionalHemisphere& h) {
    return {h.polar_bins(), h.azimuth_bins(), std::vector<char>(h.bin_count(), 0)};
  }

  std::size_t count() const { return static_cast<std::size_t>(std::count(bins.begin(), bins.end(), char{1})); }
  bool any() const { return count() > 0; }
};

/// Viewpoint on `hemi` at unit direction `dir`.
inline Viewpoint viewpoint_frame(const Vec3& dir, const DirectionalHemisphere& hemi) {
  require(std::abs(dir.norm() - 1.0) < 1e-6, Errc::Precondition, "viewpoint direction must be unit length");
  return hemi.viewpoint(dir);
}

/// Ray/triangle intersection (Moller-Trumbore), t > 0.
inline bool ray_hits_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-18) return false;
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0 || u > 1) return false;
  const Vec3 q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < 0 || u + v > 1) return false;
  return e2.dot(q) * inv > 0;
}

/// Marks bins whose ray from the center hits any of the listed triangles.
inline void project_triangles(const DirectionalHemisphere& hemi, const TriangleMesh& mesh,
                              std::span<const std::size_t> triangles, ProjectionMask& mask) {
  const auto& dirs = hemi.bin_directions();
  const int np = hemi.polar_bins(), na = hemi.azimuth_bins();
  const double step = hemi.polar_step();
  for (std::size_t t : triangles) {
    const auto& tri = mesh.triangles[t];
    const Vec3 &a = mesh.vertices[tri[0]], &b = mesh.vertices[tri[1]], &c = mesh.vertices[tri[2]];
    // Bounding cone of the triangle's directions as seen from the center.
    const Vec3 da = (a - hemi.center()).normalized(), db = (b - hemi.center()).normalized(),
               dc = (c - hemi.center()).normalized();
    Vec3 axis = da + db + dc;
    int lo = 0, hi = np - 1;
    double cos_half = -2.0;
    if (axis.norm() > 1e-9) {
      axis.normalize();
      const double half = std::max({angle_between(axis, da), angle_between(axis, db), angle_between(axis, dc)});
      if (half < kPi / 2 - 1e-6) {
        cos_half = std::cos(half) - 1e-9;
        const double polar = hemi.angles(axis).first;
        lo = std::max(0, static_cast<int>(std::floor((polar - half) / step)) - 1);
        hi = std::min(np - 1, static_cast<int>(std::floor((polar + half) / step)) + 1);
      }
    }
    for (int ip = lo; ip <= hi; ++ip)
      for (int ia = 0; ia < na; ++ia) {
        const std::size_t k = static_cast<std::size_t>(ip) * na + ia;
        if (mask.bins[k] || dirs[k].dot(axis) < cos_half) continue;
        if (ray_hits_triangle(hemi.center(), dirs[k], a, b, c)) mask.bins[k] = 1;
      }
  }
}

inline ProjectionMask project_to_hemisphere(const DirectionalHemisphere& hemi, const TriangleMesh& mesh) {
  require(!mesh.triangles.empty(), Errc::EmptyInput, "projection of empty mesh");
  auto mask = ProjectionMask::empty_for(hemi);
  std::vector<std::size_t> all(mesh.triangles.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  project_triangles(hemi, mesh, all, mask);
  return mask;
}

/// Point-splat projection: each point covers the directions within
/// atan(splat_radius / distance) of its own direction. `splat_radii` holds one
/// radius per point, in meters.
inline ProjectionMask project_to_hemisphere(const DirectionalHemisphere& hemi, std::span<const Vec3> points,
                                            std::span<const double> splat_radii) {
  require(points.size() == splat_radii.size(), Errc::Precondition, "one splat radius per point");
  auto mask = ProjectionMask::empty_for(hemi);
  const int np = hemi.polar_bins(), na = hemi.azimuth_bins();
  const double step = hemi.polar_step();
  const auto& dirs = hemi.bin_directions();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 rel = points[i] - hemi.center();
    const double dist = rel.norm();
    if (dist < 1e-12) continue;
    const Vec3 u = rel / dist;
    const double alpha = std::atan2(splat_radii[i], dist);
    const double cos_alpha = std::cos(alpha);
    const auto [polar, az] = hemi.angles(u);
    const int lo = std::max(0, static_cast<int>(std::floor((polar - alpha) / step)) - 1);
    const int hi = std::min(np - 1, static_cast<int>(std::floor((polar + alpha) / step)) + 1);
    for (int ip = lo; ip <= hi; ++ip)
      for (int ia = 0; ia < na; ++ia) {
        const std::size_t k = static_cast<std::size_t>(ip) * na + ia;
        if (!mask.bins[k] && dirs[k].dot(u) >= cos_alpha) mask.bins[k] = 1;
      }
    if (auto own = hemi.bin_of(u)) mask.bins[*own] = 1;
  }
  return mask;
}

/// Splat radii from local sampling density: `factor` times each point's
/// nearest-neighbor distance within `tree`.
inline std::vector<double> local_splat_radii(std::span<const Vec3> points, const KdTree& tree, double factor) {
  std::vector<double> radii(points.size(), 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto nb = tree.knn(points[i], 2);
    radii[i] = nb.size() == 2 ? factor * std::sqrt(nb[1].dist2) : 0.0;
  }
  return radii;
}

/// Bins set in `polygon` and clear in `occluder`.
inline ProjectionMask mask_difference(const ProjectionMask& polygon, const ProjectionMask& occluder) {
  require(polygon.polar_bins == occluder.polar_bins && polygon.azimuth_bins == occluder.azimuth_bins &&
              polygon.bins.size() == occluder.bins.size(),
          Errc::GridMismatch, "projection masks use different hemisphere grids");
  ProjectionMask out = polygon;
  for (std::size_t k = 0; k < out.bins.size(); ++k) out.bins[k] = polygon.bins[k] && !occluder.bins[k];
  return out;
}

}  // namespace plantscan
