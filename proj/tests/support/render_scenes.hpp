#pragma once

#include <plantscan/lightfield/render.hpp>
#include <plantscan/lightfield/scene.hpp>
#include <plantscan/nbv/viewpoint.hpp>

#include <cmath>
#include <vector>

namespace plantscan::testing {

struct Patch {
  Vec3 center;
  Vec3 normal;
  double side;
  Material material;
};

// Square flat patches on a regular grid, one pseudo-leaf per patch.
inline SceneModel patch_scene(const std::vector<Patch>& patches, double spacing) {
  SceneModel s;
  s.spacing = spacing;
  s.ground_height = -10;
  s.reference.center = Vec3(5, 5, 0);
  for (std::size_t k = 0; k < patches.size(); ++k) {
    const auto& p = patches[k];
    const Vec3 n = p.normal.normalized();
    const Vec3 u = any_orthogonal(n), v = n.cross(u);
    Leaf leaf;
    leaf.id = static_cast<int>(k);
    leaf.begin = s.plant.size();
    leaf.material = p.material;
    const int half = static_cast<int>(std::floor(p.side / 2 / spacing + 1e-9));
    for (int i = -half; i <= half; ++i)
      for (int j = -half; j <= half; ++j) {
        s.plant.points.push_back(p.center + i * spacing * u + j * spacing * v);
        s.plant.normals.push_back(n);
        s.leaf_of.push_back(leaf.id);
        s.edge_distance.push_back(spacing * (half - std::max(std::abs(i), std::abs(j))));
      }
    leaf.end = s.plant.size();
    leaf.normal = n;
    leaf.center = p.center;
    s.leaves.push_back(leaf);
  }
  return s;
}

inline Material lambert(double rho) { return {Spectrum::Constant(rho), 0.0, 1.0}; }

inline Viewpoint looking_down(const Vec3& target, double height, int id = 0) {
  Viewpoint vp;
  vp.id = id;
  vp.position = target + Vec3(0, 0, height);
  vp.frame = meridian_frame(Vec3::UnitZ(), Vec3::UnitZ(), Vec3::UnitX());
  vp.sight_distance = height;
  return vp;
}

inline Viewpoint looking_at(const Vec3& target, const Vec3& dir, double dist, int id = 0) {
  Viewpoint vp;
  vp.id = id;
  vp.position = target + dist * dir.normalized();
  vp.frame = meridian_frame(dir.normalized(), Vec3::UnitZ(), Vec3::UnitX());
  vp.sight_distance = dist;
  return vp;
}

inline RenderOptions clean() {
  RenderOptions o;
  o.noise = 0;
  o.dark = Spectrum::Zero();
  return o;
}

}  // namespace plantscan::testing
