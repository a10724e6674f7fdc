#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/rng.hpp>
#include <plantscan/lightfield/shading.hpp>
#include <plantscan/pointcloud/point_cloud.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace plantscan {

/// Chlorophyll-linked leaf reflectance: red absorption grows logistically
/// with SPAD and the red edge moves toward longer wavelengths, while the NIR
/// plateau is a per-leaf nuisance level.
struct SpadLink {
  double red_floor = 0.04;
  double red_span = 0.18;
  double midpoint = 40.0;
  double width = 8.0;
  double edge_nm = 705.0;
  double edge_shift = 0.4;  // nm per SPAD unit
  double edge_width = 12.0;
  double nir_min = 0.42;
  double nir_max = 0.52;
  double noise = 0.004;  // per-band albedo jitter
};

inline double red_reflectance(double spad, const SpadLink& link) {
  return link.red_floor + link.red_span / (1.0 + std::exp((spad - link.midpoint) / link.width));
}

inline Spectrum chlorophyll_albedo(double spad, double nir, const SpadLink& link) {
  const auto centers = band_centers();
  const double red = red_reflectance(spad, link);
  const double edge = link.edge_nm + link.edge_shift * (spad - link.midpoint);
  Spectrum s;
  for (std::size_t b = 0; b < kBandCount; ++b)
    s[b] = red + (nir - red) / (1.0 + std::exp(-(centers[b] - edge) / link.edge_width));
  return s;
}

/// Solid hemisphere resting on its flat base, dome facing +z.
struct ReferenceSphere {
  Vec3 center = Vec3(0.25, 0.0, 0.0);
  double radius = 0.05;
  Material material{Spectrum::Constant(1.0), 0.0, 1.0};

  bool contains(const Vec3& p) const { return p.z() >= center.z() && (p - center).norm() <= radius; }
  Vec3 normal_at(const Vec3& p) const { return (p - center).normalized(); }
};

struct Leaf {
  int id = 0;
  std::size_t begin = 0, end = 0;  // point range in the plant cloud
  double spad = 0;
  double inclination_deg = 0;  // mean normal against vertical, before curvature
  Material material;
  Vec3 normal = Vec3::UnitZ();  // blade normal at the leaf center
  Vec3 center = Vec3::Zero();

  std::size_t size() const { return end - begin; }
};

struct SceneModel {
  PointCloud plant;                 // points with unit normals
  std::vector<int> leaf_of;         // per point
  std::vector<double> edge_distance;  // per point, distance to the leaf outline, m
  std::vector<Leaf> leaves;
  double spacing = 0.002;           // sampling distance of the leaf surfaces
  ReferenceSphere reference;
  double ground_height = 0.0;

  const Material& material_of(std::size_t i) const { return leaves[static_cast<std::size_t>(leaf_of[i])].material; }
  std::vector<std::size_t> leaf_indices(int leaf) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = leaves[leaf].begin; i < leaves[leaf].end; ++i) idx.push_back(i);
    return idx;
  }
  /// Same scene without plant geometry.
  SceneModel reference_only() const {
    SceneModel s;
    s.spacing = spacing;
    s.reference = reference;
    s.ground_height = ground_height;
    return s;
  }
};

struct PlantSpec {
  int leaf_count = 5;
  double leaf_length = 0.06;
  double width_ratio = 0.5;
  double inclination_min_deg = 0.0;
  double inclination_max_deg = 50.0;
  double curvature = 0.0;  // 1/m, bowl-shaped bending of each blade
  double occlusion = 0.3;  // 0 spreads leaves around the stem, 1 stacks them
  double spacing = 0.002;
  double base_height = 0.05;
  double plant_height = 0.15;
  double spad_min = 20.0;
  double spad_max = 60.0;
  double leaf_k_s = 0.0;
  double leaf_shininess = 10.0;
  SpadLink link;
  ReferenceSphere reference;

  void validate() const {
    require(leaf_count >= 1, Errc::Precondition, "leaf_count must be at least 1");
    require(leaf_length > 0 && width_ratio > 0 && spacing > 0, Errc::Precondition, "leaf dimensions must be positive");
    require(inclination_min_deg <= inclination_max_deg, Errc::Precondition, "inclination range is reversed");
    require(occlusion >= 0 && occlusion <= 1, Errc::Precondition, "occlusion must lie in [0, 1]");
    require(spad_min <= spad_max, Errc::Precondition, "SPAD range is reversed");
  }
};

/// Rotation taking the blade's local frame (length x, width y, normal z) to
/// world: tilt the tip down by `inclination` then turn to `azimuth`.
inline Mat3 leaf_rotation(double azimuth, double inclination) {
  return (Eigen::AngleAxisd(azimuth, Vec3::UnitZ()) * Eigen::AngleAxisd(inclination, Vec3::UnitY())).toRotationMatrix();
}

/// Samples one blade: an elliptic-ish outline on a square grid of `spacing`,
/// bent into a bowl of the given curvature, attached at `attach`.
inline void add_leaf(SceneModel& scene, const Vec3& attach, const Mat3& rot, double length, double width,
                     double curvature, double spacing) {
  const double half_w = width / 2;
  const int nx = static_cast<int>(std::floor(length / spacing));
  const int ny = static_cast<int>(std::floor(half_w / spacing));
  for (int i = 1; i < nx; ++i) {
    const double x = i * spacing;
    const double w = half_w * std::pow(std::sin(kPi * x / length), 0.7);
    for (int j = -ny; j <= ny; ++j) {
      const double y = j * spacing;
      if (std::abs(y) > w) continue;
      const double xc = x - length / 2;
      const Vec3 local(x, y, 0.5 * curvature * (xc * xc + y * y));
      const Vec3 n_local = Vec3(-curvature * xc, -curvature * y, 1.0).normalized();
      scene.plant.points.push_back(attach + rot * local);
      scene.plant.normals.push_back(rot * n_local);
      scene.edge_distance.push_back(std::min({w - std::abs(y), x, length - x}));
    }
  }
}

/// Parametric plant: `leaf_count` curved blades around a vertical axis with
/// chlorophyll-linked albedo spectra. Deterministic per seed.
inline SceneModel synth_plant(const PlantSpec& spec, std::uint64_t seed) {
  spec.validate();
  SceneModel scene;
  scene.spacing = spec.spacing;
  scene.reference = spec.reference;
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  const double occ = spec.occlusion;
  const double gap = (1 - occ) * spec.plant_height / spec.leaf_count + occ * 0.2 * spec.leaf_length;
  for (int k = 0; k < spec.leaf_count; ++k) {
    Rng rng = substream(seed, "leaf", static_cast<std::uint64_t>(k));
    Leaf leaf;
    leaf.id = k;
    leaf.spad = uniform(rng, spec.spad_min, spec.spad_max);
    const double nir = uniform(rng, spec.link.nir_min, spec.link.nir_max);
    leaf.material.albedo = chlorophyll_albedo(leaf.spad, nir, spec.link);
    for (std::size_t b = 0; b < kBandCount; ++b)
      leaf.material.albedo[b] = std::clamp(leaf.material.albedo[b] + gaussian(rng, 0.0, spec.link.noise), 0.0, 1.0);
    leaf.material.k_s = spec.leaf_k_s;
    leaf.material.shininess = spec.leaf_shininess;
    leaf.inclination_deg = uniform(rng, spec.inclination_min_deg, spec.inclination_max_deg);
    const double azimuth = (1 - occ) * (k * golden + uniform(rng, -0.2, 0.2)) + occ * uniform(rng, -0.1, 0.1);
    const Mat3 rot = leaf_rotation(azimuth, deg2rad(leaf.inclination_deg));
    const Vec3 outward(std::cos(azimuth), std::sin(azimuth), 0.0);
    const Vec3 attach = Vec3(0, 0, spec.base_height + k * gap) + 0.01 * outward;

    leaf.begin = scene.plant.size();
    add_leaf(scene, attach, rot, spec.leaf_length, spec.leaf_length * spec.width_ratio, spec.curvature, spec.spacing);
    leaf.end = scene.plant.size();
    require(leaf.end > leaf.begin, Errc::Precondition, "leaf too small for the sampling spacing");
    scene.leaf_of.insert(scene.leaf_of.end(), leaf.size(), k);
    leaf.normal = rot.col(2);
    leaf.center = attach + rot * Vec3(spec.leaf_length / 2, 0, 0);
    scene.leaves.push_back(leaf);
  }
  return scene;
}

}  // namespace plantscan
