#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/types.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace plantscan {

/// 3D points with optional per-point channels. A spectrum whose first band is
/// NaN marks a point that carries geometry but no spectral data.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<Vec3> colors;
  std::vector<Spectrum> bands;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }
  bool has_colors() const { return !colors.empty(); }
  bool has_bands() const { return !bands.empty(); }
  bool has_spectrum(std::size_t i) const { return has_bands() && !std::isnan(bands[i][0]); }

  void reserve(std::size_t n) {
    points.reserve(n);
    if (has_normals()) normals.reserve(n);
  }

  /// Throws Precondition if any present channel has the wrong length.
  void validate() const {
    const auto n = points.size();
    require(normals.empty() || normals.size() == n, Errc::Precondition, "normals channel length mismatch");
    require(colors.empty() || colors.size() == n, Errc::Precondition, "colors channel length mismatch");
    require(bands.empty() || bands.size() == n, Errc::Precondition, "bands channel length mismatch");
    for (const auto& p : points)
      require(p.allFinite(), Errc::Precondition, "non-finite point coordinate");
  }
};

inline Spectrum no_spectrum() { return Spectrum::Constant(std::numeric_limits<double>::quiet_NaN()); }

/// Copy of the points at `indices`, channels included.
inline PointCloud subset(const PointCloud& cloud, std::span<const std::size_t> indices) {
  PointCloud out;
  out.points.reserve(indices.size());
  for (auto i : indices) {
    out.points.push_back(cloud.points[i]);
    if (cloud.has_normals()) out.normals.push_back(cloud.normals[i]);
    if (cloud.has_colors()) out.colors.push_back(cloud.colors[i]);
    if (cloud.has_bands()) out.bands.push_back(cloud.bands[i]);
  }
  return out;
}

/// Appends `other` to `cloud`. Channels present in only one input are padded.
inline void append(PointCloud& cloud, const PointCloud& other) {
  const bool was_empty = cloud.empty();
  const auto pad = [&](auto& dst, const auto& src, const auto& fill) {
    if (src.empty() && dst.empty()) return;
    if (dst.empty() && !was_empty) dst.assign(cloud.points.size(), fill);
    if (src.empty())
      dst.insert(dst.end(), other.points.size(), fill);
    else
      dst.insert(dst.end(), src.begin(), src.end());
  };
  pad(cloud.normals, other.normals, Vec3(0, 0, 1));
  pad(cloud.colors, other.colors, Vec3(0, 0, 0));
  pad(cloud.bands, other.bands, no_spectrum());
  cloud.points.insert(cloud.points.end(), other.points.begin(), other.points.end());
}

inline PointCloud transformed(const PointCloud& cloud, const Pose& pose) {
  PointCloud out = cloud;
  for (auto& p : out.points) p = pose.apply(p);
  for (auto& n : out.normals) n = pose.rotation * n;
  return out;
}

inline Vec3 centroid(std::span<const Vec3> points) {
  require(!points.empty(), Errc::EmptyInput, "centroid of empty point set");
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  return c / static_cast<double>(points.size());
}

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
  double volume() const { return extent().prod(); }
};

inline Aabb compute_aabb(std::span<const Vec3> points) {
  require(!points.empty(), Errc::EmptyInput, "AABB of empty cloud");
  Aabb box{points.front(), points.front()};
  for (const auto& p : points) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

inline Aabb compute_aabb(const PointCloud& cloud) { return compute_aabb(cloud.points); }

/// PCA-oriented bounding box. Columns of `axes` form a right-handed rotation and
/// are ordered by descending spread; half extents follow the same order.
struct Obb {
  Vec3 center = Vec3::Zero();
  Mat3 axes = Mat3::Identity();
  Vec3 half_extents = Vec3::Zero();

  Vec3 axis(int i) const { return axes.col(i); }
  /// Axis of least extent; the leaf-normal direction for thin parts.
  Vec3 least_axis() const { return axes.col(2); }
};

namespace detail {

inline int dominant_component(const Vec3& v) {
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(v[i]) > std::abs(v[best]) + 1e-12) best = i;
  return best;
}

inline Vec3 fix_sign(const Vec3& v) { return v[dominant_component(v)] < 0 ? Vec3(-v) : v; }

}  // namespace detail

inline Mat3 covariance(std::span<const Vec3> points, const Vec3& mean) {
  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - mean;
    cov.noalias() += d * d.transpose();
  }
  return cov / static_cast<double>(points.size());
}

inline Obb compute_obb(std::span<const Vec3> points) {
  require(!points.empty(), Errc::EmptyInput, "OBB of empty cloud");
  const Vec3 mean = centroid(points);
  const Mat3 cov = covariance(points, mean);
  Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
  const Vec3 evals = solver.eigenvalues();
  const Mat3 evecs = solver.eigenvectors();

  // Descending eigenvalue; near-ties resolved by the vector's dominant world axis.
  std::array<int, 3> order{0, 1, 2};
  const double scale = std::max(1e-300, std::abs(evals.maxCoeff()));
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (std::abs(evals[a] - evals[b]) > 1e-9 * scale) return evals[a] > evals[b];
    return detail::dominant_component(evecs.col(a)) < detail::dominant_component(evecs.col(b));
  });

  Obb box;
  const Vec3 a0 = detail::fix_sign(evecs.col(order[0]).normalized());
  Vec3 a1 = evecs.col(order[1]);
  a1 = detail::fix_sign((a1 - a1.dot(a0) * a0).normalized());
  box.axes.col(0) = a0;
  box.axes.col(1) = a1;
  box.axes.col(2) = a0.cross(a1);

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& p : points) {
    const Vec3 local = box.axes.transpose() * (p - mean);
    lo = lo.cwiseMin(local);
    hi = hi.cwiseMax(local);
  }
  box.half_extents = 0.5 * (hi - lo);
  box.center = mean + box.axes * (0.5 * (hi + lo));
  return box;
}

inline Obb compute_obb(const PointCloud& cloud) { return compute_obb(cloud.points); }

struct VoxelKey {
  std::int64_t x, y, z;
  auto operator<=>(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

inline VoxelKey voxel_key(const Vec3& p, double voxel_size) {
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
}

/// Voxel-grid filter: one centroid per occupied voxel, output ordered by voxel key.
/// Spectra average only over members that carry one.
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size) {
  require(voxel_size > 0, Errc::Precondition, "voxel_size must be positive");
  PointCloud out;
  if (cloud.empty()) return out;

  struct Acc {
    Vec3 p = Vec3::Zero();
    Vec3 n = Vec3::Zero();
    Vec3 c = Vec3::Zero();
    Spectrum s = Spectrum::Zero();
    std::size_t count = 0;
    std::size_t spectral = 0;
  };
  std::map<VoxelKey, Acc> voxels;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto& acc = voxels[voxel_key(cloud.points[i], voxel_size)];
    acc.p += cloud.points[i];
    if (cloud.has_normals()) acc.n += cloud.normals[i];
    if (cloud.has_colors()) acc.c += cloud.colors[i];
    if (cloud.has_spectrum(i)) {
      acc.s += cloud.bands[i];
      ++acc.spectral;
    }
    ++acc.count;
  }

  out.points.reserve(voxels.size());
  for (const auto& [key, acc] : voxels) {
    const double inv = 1.0 / static_cast<double>(acc.count);
    out.points.push_back(acc.p * inv);
    if (cloud.has_normals()) {
      const double len = acc.n.norm();
      out.normals.push_back(len > 1e-12 ? Vec3(acc.n / len) : Vec3(0, 0, 1));
    }
    if (cloud.has_colors()) out.colors.push_back(acc.c * inv);
    if (cloud.has_bands())
      out.bands.push_back(acc.spectral ? Spectrum(acc.s / static_cast<double>(acc.spectral)) : no_spectrum());
  }
  return out;
}

}  // namespace plantscan
