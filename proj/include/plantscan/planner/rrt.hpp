#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/rng.hpp>
#include <plantscan/planner/kinematics.hpp>
#include <plantscan/planner/octomap.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace plantscan {

using ArmPath = std::vector<JointConfig>;

/// Arm collision model: link centerlines between consecutive joint-frame
/// origins, plus flange to camera, sampled at no more than half a leaf and
/// tested against a grid already inflated by the link radius.
class ArmCollisionChecker {
 public:
  ArmCollisionChecker(const KinematicChain& chain, const OccupancyGrid& grid, const Pose& flange_to_camera = {})
      : chain_(chain), grid_(grid), camera_(flange_to_camera) {}

  const OccupancyGrid& grid() const { return grid_; }

  /// Centerline sample points of every link at configuration `q`.
  std::vector<Vec3> link_samples(const JointConfig& q) const {
    const auto f = joint_frames(chain_, q);
    std::vector<Vec3> pts;
    const double spacing = grid_.resolution() / 2;
    auto segment = [&](const Vec3& a, const Vec3& b) {
      const int n = std::max(1, static_cast<int>(std::ceil((b - a).norm() / spacing)));
      for (int k = 0; k <= n; ++k) pts.push_back(a + (b - a) * (static_cast<double>(k) / n));
    };
    for (int i = 0; i < 6; ++i) segment(f[i].translation, f[i + 1].translation);
    segment(f[6].translation, (f[6] * camera_).translation);
    return pts;
  }

  bool config_free(const JointConfig& q) const {
    if (grid_.empty()) return true;
    for (const Vec3& p : link_samples(q))
      if (grid_.occupied(p)) return false;
    return true;
  }

  /// Straight joint-space motion checked at steps of at most `max_step` rad
  /// in every joint; `a` itself is assumed checked.
  bool edge_free(const JointConfig& a, const JointConfig& b, double max_step = deg2rad(1.0)) const {
    const int n = interpolation_steps(a, b, max_step);
    for (int k = 1; k <= n; ++k)
      if (!config_free(a + (b - a) * (static_cast<double>(k) / n))) return false;
    return true;
  }

  static int interpolation_steps(const JointConfig& a, const JointConfig& b, double max_step) {
    return std::max(1, static_cast<int>(std::ceil((b - a).cwiseAbs().maxCoeff() / max_step - 1e-12)));
  }

 private:
  KinematicChain chain_;
  const OccupancyGrid& grid_;
  Pose camera_;
};

/// Occupancy map for the arm collision model: inflated by the link radius
/// plus half a leaf, so that sampling link centerlines at half-leaf spacing
/// never misses a scene point closer than `capsule_radius`.
inline OccupancyGrid build_collision_map(std::span<const Vec3> scene, double resolution, double capsule_radius = 0.04) {
  return build_octomap(scene, resolution, capsule_radius + resolution / 2);
}

struct RrtParams {
  double step = 0.2;  // rad
  double goal_bias = 0.1;
  int max_iterations = 5000;
  double check_step = deg2rad(1.0);
  int shortcut_attempts = 200;
  std::uint64_t seed = 0;
};

/// Joint-space length of a path.
inline double path_length(const ArmPath& path) {
  double len = 0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) len += (path[i + 1] - path[i]).norm();
  return len;
}

/// Single-tree goal-biased RRT in joint space, followed by random shortcut
/// smoothing.
inline ArmPath rrt_plan(const JointConfig& start, const JointConfig& goal, const ArmCollisionChecker& checker,
                        const RrtParams& p = {}) {
  require(checker.config_free(start), Errc::InvalidEndpoint, "RRT start configuration is in collision");
  require(checker.config_free(goal), Errc::InvalidEndpoint, "RRT goal configuration is in collision");
  Rng rng = substream(p.seed, "rrt");

  struct Node {
    JointConfig q;
    int parent;
  };
  std::vector<Node> tree{{start, -1}};
  ArmPath path;
  if (checker.edge_free(start, goal, p.check_step)) {
    path = {start, goal};
  } else {
    int reached = -1;
    for (int it = 0; it < p.max_iterations && reached < 0; ++it) {
      JointConfig sample;
      if (uniform(rng, 0.0, 1.0) < p.goal_bias) {
        sample = goal;
      } else {
        for (int j = 0; j < 6; ++j) sample[j] = uniform(rng, 0.0, kTwoPi);
      }
      int nearest = 0;
      double best = std::numeric_limits<double>::infinity();
      for (int n = 0; n < static_cast<int>(tree.size()); ++n)
        if (double d = (tree[n].q - sample).squaredNorm(); d < best) {
          best = d;
          nearest = n;
        }
      const JointConfig from = tree[nearest].q;
      const double dist = std::sqrt(best);
      if (dist < 1e-12) continue;
      const JointConfig to = dist <= p.step ? sample : JointConfig(from + (sample - from) * (p.step / dist));
      if (!checker.edge_free(from, to, p.check_step)) continue;
      tree.push_back({to, nearest});
      const int added = static_cast<int>(tree.size()) - 1;
      if (to == goal) {
        reached = added;
      } else if ((to - goal).norm() <= p.step && checker.edge_free(to, goal, p.check_step)) {
        tree.push_back({goal, added});
        reached = added + 1;
      }
    }
    if (reached < 0) fail(Errc::PlanningTimeout, "RRT found no path within the iteration budget");
    for (int n = reached; n >= 0; n = tree[n].parent) path.push_back(tree[n].q);
    std::reverse(path.begin(), path.end());
  }

  for (int s = 0; s < p.shortcut_attempts && path.size() > 2; ++s) {
    std::size_t i = uniform_index(rng, path.size()), j = uniform_index(rng, path.size());
    if (i > j) std::swap(i, j);
    if (j - i < 2) continue;
    if (checker.edge_free(path[i], path[j], p.check_step))
      path.erase(path.begin() + static_cast<long>(i) + 1, path.begin() + static_cast<long>(j));
  }
  return path;
}

}  // namespace plantscan
