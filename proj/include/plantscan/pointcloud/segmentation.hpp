#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/pointcloud/kdtree.hpp>
#include <plantscan/pointcloud/normals.hpp>
#include <plantscan/pointcloud/point_cloud.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace plantscan {

struct RegionGrowingParams {
  double angle_threshold = deg2rad(10.0);
  double curvature_threshold = 0.05;
  std::size_t min_cluster = 30;
  std::size_t neighbors = 16;
};

/// Smoothness-constrained region growing over the k-NN graph. Seeds are taken
/// in ascending curvature; a neighbor joins if its normal is within the angle
/// threshold of the admitting point, and continues growth if its curvature is
/// below the curvature threshold.
inline std::vector<std::vector<std::size_t>> region_growing_segment(const PointCloud& cloud,
                                                                    const RegionGrowingParams& params = {}) {
  require(cloud.has_normals(), Errc::MissingChannel, "region growing needs normals");
  const std::size_t n = cloud.size();
  if (n == 0) return {};
  const KdTree tree(cloud.points);
  const std::size_t k = std::min(params.neighbors, n - 1);
  const auto shapes = local_shapes(cloud, tree, std::max<std::size_t>(k, 1));
  const double cos_thr = std::cos(params.angle_threshold);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return shapes[a].curvature < shapes[b].curvature; });

  std::vector<int> label(n, -1);
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<std::size_t> seeds;
  for (std::size_t start : order) {
    if (label[start] >= 0) continue;
    const int id = static_cast<int>(clusters.size());
    std::vector<std::size_t> members{start};
    label[start] = id;
    seeds.assign(1, start);
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const std::size_t cur = seeds[s];
      for (const auto& nb : tree.knn(cloud.points[cur], k + 1)) {
        const std::size_t j = nb.index;
        if (j == cur || label[j] >= 0) continue;
        if (std::abs(cloud.normals[cur].dot(cloud.normals[j])) < cos_thr) continue;
        label[j] = id;
        members.push_back(j);
        if (shapes[j].curvature < params.curvature_threshold) seeds.push_back(j);
      }
    }
    clusters.push_back(std::move(members));
  }

  std::vector<std::vector<std::size_t>> kept;
  for (auto& c : clusters)
    if (c.size() >= params.min_cluster) {
      std::sort(c.begin(), c.end());
      kept.push_back(std::move(c));
    }
  return kept;
}

}  // namespace plantscan
