#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/pointcloud/point_cloud.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

namespace plantscan {

/// Occupancy octree over leaves of side `resolution`, aligned to multiples of
/// the resolution in world coordinates.
class OccupancyGrid {
 public:
  explicit OccupancyGrid(double resolution = 0.05) : res_(resolution) {
    require(resolution > 0, Errc::Precondition, "octree resolution must be positive");
  }

  double resolution() const { return res_; }
  std::size_t occupied_count() const { return leaves_.size(); }
  bool empty() const { return leaves_.empty(); }

  VoxelKey key_of(const Vec3& p) const { return voxel_key(p, res_); }

  /// Inserts a batch of occupied leaves and rebuilds the tree.
  void set_occupied(std::vector<VoxelKey> keys) {
    leaves_.insert(leaves_.end(), keys.begin(), keys.end());
    std::sort(leaves_.begin(), leaves_.end());
    leaves_.erase(std::unique(leaves_.begin(), leaves_.end()), leaves_.end());
    rebuild();
  }

  /// Occupied leaf keys in ascending order.
  const std::vector<VoxelKey>& occupied_leaves() const { return leaves_; }

  bool occupied(const VoxelKey& k) const {
    if (nodes_.empty()) return false;
    const std::array<std::int64_t, 3> rel{k.x - origin_.x, k.y - origin_.y, k.z - origin_.z};
    const std::int64_t side = std::int64_t{1} << depth_;
    for (int a = 0; a < 3; ++a)
      if (rel[a] < 0 || rel[a] >= side) return false;
    std::int32_t node = 0;
    for (int level = depth_ - 1; level >= 0; --level) {
      const int child = static_cast<int>(((rel[0] >> level) & 1) | (((rel[1] >> level) & 1) << 1) |
                                         (((rel[2] >> level) & 1) << 2));
      node = nodes_[node].child[child];
      if (node < 0) return false;
    }
    return true;
  }

  bool occupied(const Vec3& p) const { return occupied(key_of(p)); }

 private:
  struct Node {
    std::array<std::int32_t, 8> child{-1, -1, -1, -1, -1, -1, -1, -1};
  };

  void rebuild() {
    nodes_.clear();
    if (leaves_.empty()) return;
    VoxelKey lo = leaves_.front(), hi = leaves_.front();
    for (const auto& k : leaves_) {
      lo = {std::min(lo.x, k.x), std::min(lo.y, k.y), std::min(lo.z, k.z)};
      hi = {std::max(hi.x, k.x), std::max(hi.y, k.y), std::max(hi.z, k.z)};
    }
    origin_ = lo;
    const std::int64_t span = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z}) + 1;
    depth_ = 0;
    while ((std::int64_t{1} << depth_) < span) ++depth_;
    nodes_.emplace_back();
    for (const auto& k : leaves_) {
      const std::array<std::int64_t, 3> rel{k.x - origin_.x, k.y - origin_.y, k.z - origin_.z};
      std::int32_t node = 0;
      for (int level = depth_ - 1; level >= 0; --level) {
        const int child = static_cast<int>(((rel[0] >> level) & 1) | (((rel[1] >> level) & 1) << 1) |
                                           (((rel[2] >> level) & 1) << 2));
        if (nodes_[node].child[child] < 0) {
          nodes_[node].child[child] = static_cast<std::int32_t>(nodes_.size());
          nodes_.emplace_back();
        }
        node = nodes_[node].child[child];
      }
    }
  }

  double res_;
  std::vector<VoxelKey> leaves_;
  std::vector<Node> nodes_;
  VoxelKey origin_{0, 0, 0};
  int depth_ = 0;
};

/// Distance from `p` to the closed box of leaf `k`.
inline double leaf_distance(const Vec3& p, const VoxelKey& k, double res) {
  const std::array<std::int64_t, 3> idx{k.x, k.y, k.z};
  double d2 = 0;
  for (int a = 0; a < 3; ++a) {
    const double lo = static_cast<double>(idx[a]) * res, hi = lo + res;
    const double d = p[a] < lo ? lo - p[a] : (p[a] > hi ? p[a] - hi : 0.0);
    d2 += d * d;
  }
  return std::sqrt(d2);
}

/// Occupancy map of a scene: each point's leaf plus every leaf closer to the
/// point than `inflation`.
inline OccupancyGrid build_octomap(std::span<const Vec3> scene, double resolution, double inflation) {
  require(inflation >= 0, Errc::Precondition, "inflation must be non-negative");
  OccupancyGrid grid(resolution);
  std::vector<VoxelKey> keys;
  const auto reach = static_cast<std::int64_t>(std::ceil(inflation / resolution));
  for (const Vec3& p : scene) {
    const VoxelKey c = grid.key_of(p);
    keys.push_back(c);
    if (inflation <= 0) continue;
    for (std::int64_t i = -reach; i <= reach; ++i)
      for (std::int64_t j = -reach; j <= reach; ++j)
        for (std::int64_t k = -reach; k <= reach; ++k) {
          const VoxelKey n{c.x + i, c.y + j, c.z + k};
          if (leaf_distance(p, n, resolution) < inflation) keys.push_back(n);
        }
  }
  grid.set_occupied(std::move(keys));
  return grid;
}

inline OccupancyGrid build_octomap(const PointCloud& scene, double resolution, double inflation) {
  return build_octomap(std::span<const Vec3>(scene.points), resolution, inflation);
}

}  // namespace plantscan
