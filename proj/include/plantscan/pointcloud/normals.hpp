#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/pointcloud/kdtree.hpp>
#include <plantscan/pointcloud/point_cloud.hpp>

#include <Eigen/Eigenvalues>

#include <vector>

namespace plantscan {

struct LocalShape {
  Vec3 normal;
  double curvature;  // smallest eigenvalue over eigenvalue sum
};

/// PCA of each point's k-neighborhood (the point itself included).
inline std::vector<LocalShape> local_shapes(const PointCloud& cloud, const KdTree& tree, std::size_t k) {
  std::vector<LocalShape> out(cloud.size());
  std::vector<Vec3> nb;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    nb.clear();
    for (const auto& n : tree.knn(cloud.points[i], k + 1)) nb.push_back(cloud.points[n.index]);
    const Vec3 mean = centroid(nb);
    Eigen::SelfAdjointEigenSolver<Mat3> solver(covariance(nb, mean));
    const Vec3 ev = solver.eigenvalues().cwiseMax(0.0);
    const double sum = ev.sum();
    out[i] = {solver.eigenvectors().col(0).normalized(), sum > 0 ? ev[0] / sum : 0.0};
  }
  return out;
}

/// Normals from k-NN PCA, flipped to face `sensor`.
inline PointCloud estimate_normals(const PointCloud& cloud, std::size_t k, const Vec3& sensor = Vec3(0, 0, 10)) {
  require(k >= 3, Errc::Precondition, "normal estimation needs k >= 3");
  require(cloud.size() >= k + 1, Errc::InsufficientPoints, "cloud smaller than k + 1");
  const KdTree tree(cloud.points);
  const auto shapes = local_shapes(cloud, tree, k);
  PointCloud out = cloud;
  out.normals.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Vec3 n = shapes[i].normal;
    if (n.dot(sensor - cloud.points[i]) < 0) n = -n;
    out.normals[i] = n;
  }
  return out;
}

}  // namespace plantscan
