#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/log.hpp>
#include <plantscan/core/rng.hpp>
#include <plantscan/nbv/hemisphere.hpp>
#include <plantscan/nbv/viewpoint.hpp>
#include <plantscan/pointcloud/convex_hull.hpp>
#include <plantscan/pointcloud/kdtree.hpp>
#include <plantscan/pointcloud/point_cloud.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace plantscan {

struct NbvParams {
  double sight_distance = 0.5;
  double bin_deg = 2.0;
  double gap_spacing = deg2rad(3.0);        // sample spacing on the sphere
  double gap_increment = deg2rad(1.5);      // initial radius offset, in (0, spacing)
  double splat_factor = 1.5;                // occluder splat radius over local spacing
  Vec3 sensor_up = Vec3::UnitZ();           // half-space the VVP/AVP fronts face
  bool exclude_downward = true;
  std::uint64_t seed = 0;
};

/// One viewpoint per AABB face, `sight_distance` beyond the face center along
/// its outward normal. The bottom face is dropped when `exclude_downward`.
inline std::vector<Viewpoint> estimate_fvps(const Aabb& box, double sight_distance, bool exclude_downward = true) {
  require(sight_distance > 0, Errc::Precondition, "sight distance must be positive");
  const Vec3 c = box.center();
  const Vec3 half = 0.5 * box.extent();
  std::vector<Viewpoint> out;
  const Vec3 normals[] = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitY(), Vec3::UnitZ(), -Vec3::UnitZ()};
  for (const Vec3& n : normals) {
    if (exclude_downward && n.z() < 0) continue;
    const Vec3 face_center = c + n.cwiseProduct(half);
    Viewpoint v;
    v.id = static_cast<int>(out.size());
    v.kind = ViewKind::FVP;
    v.position = face_center + sight_distance * n;
    v.frame = meridian_frame(n, Vec3::UnitZ(), Vec3::UnitX());
    v.sight_distance = sight_distance;
    out.push_back(v);
  }
  return out;
}

/// Reference-scan viewpoints on a regular polar/azimuth grid of the upper
/// hemisphere around `center`: the pole plus full azimuth rings every
/// `step_deg` down to the horizon.
inline std::vector<Viewpoint> hemisphere_grid_viewpoints(const Vec3& center, double radius, double step_deg) {
  require(radius > 0 && step_deg > 0 && step_deg <= 90, Errc::Precondition, "bad hemisphere grid");
  const DirectionalHemisphere h(center, Vec3::UnitZ(), Vec3::UnitX(), radius, step_deg);
  const int rings = static_cast<int>(std::lround(90.0 / step_deg));
  const int per_ring = static_cast<int>(std::lround(360.0 / step_deg));
  std::vector<Viewpoint> out;
  out.push_back(h.viewpoint(Vec3::UnitZ(), ViewKind::Reference, 0));
  for (int r = 1; r <= rings; ++r)
    for (int a = 0; a < per_ring; ++a)
      out.push_back(h.viewpoint(h.direction(deg2rad(r * step_deg), deg2rad(a * step_deg)), ViewKind::Reference,
                                static_cast<int>(out.size())));
  return out;
}

/// Front direction of a thin part: the OBB least axis, signed toward `up`.
inline Vec3 part_front(const Obb& box, const Vec3& up = Vec3::UnitZ()) {
  const Vec3 n = box.least_axis();
  return n.dot(up) < 0 ? Vec3(-n) : n;
}

/// One viewpoint per leaf cluster in front of its OBB. Degenerate clusters are
/// skipped with a warning.
inline std::vector<Viewpoint> estimate_vvps(std::span<const PointCloud> clusters, double sight_distance,
                                            const Vec3& up = Vec3::UnitZ()) {
  std::vector<Viewpoint> out;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (clusters[i].size() < 3) {
      log_warn("VVP: cluster " + std::to_string(i) + " has fewer than 3 points; skipped");
      continue;
    }
    const Obb box = compute_obb(clusters[i]);
    if (box.half_extents[1] <= 1e-9) {
      log_warn("VVP: cluster " + std::to_string(i) + " is collinear; skipped");
      continue;
    }
    const Vec3 front = part_front(box, up);
    Viewpoint v;
    v.id = static_cast<int>(out.size());
    v.kind = ViewKind::VVP;
    v.position = box.center + sight_distance * front;
    v.frame = meridian_frame(front, up, box.axis(0));
    v.sight_distance = sight_distance;
    out.push_back(v);
  }
  return out;
}

/// Directions on rings of constant polar angle around the hemisphere axis,
/// roughly `spacing` radians apart, over the whole sphere.
inline std::vector<Vec3> ring_lattice(const DirectionalHemisphere& hemi, double spacing) {
  std::vector<Vec3> out;
  const int rings = static_cast<int>(std::floor(kPi / spacing + 1e-9));
  for (int j = 0; j <= rings; ++j) {
    const double polar = j * spacing;
    const int count = std::max(1, static_cast<int>(std::lround(kTwoPi * std::sin(polar) / spacing)));
    for (int k = 0; k < count; ++k) out.push_back(hemi.direction(polar, kTwoPi * k / count));
  }
  return out;
}

/// Largest-gap search over the set bins of `mask`. The mask is sampled at
/// `spacing`; each candidate scores the fraction of lattice samples within
/// radius r that fall in the mask, r starting at spacing + increment and
/// growing by `spacing` per round, and only the best-scoring candidates
/// survive. Stops once the best neighborhood holds every in-mask sample or a
/// single candidate remains; remaining ties are broken by `rng`.
inline Vec3 max_gap_point(const DirectionalHemisphere& hemi, const ProjectionMask& mask, double spacing,
                          double increment, Rng& rng) {
  require(spacing > 0 && increment > 0 && increment < spacing, Errc::Precondition,
          "gap search needs 0 < increment < spacing");
  require(mask.polar_bins == hemi.polar_bins() && mask.azimuth_bins == hemi.azimuth_bins(), Errc::GridMismatch,
          "mask does not match hemisphere grid");
  std::vector<Vec3> lattice = ring_lattice(hemi, spacing);
  std::vector<Vec3> samples;
  for (const Vec3& d : lattice)
    if (auto bin = hemi.bin_of(d); bin && mask.bins[*bin]) samples.push_back(d);
  if (samples.empty()) {
    // Masks narrower than the sample spacing still have their bin centers.
    for (std::size_t b = 0; b < mask.bins.size(); ++b)
      if (mask.bins[b]) samples.push_back(hemi.bin_direction(b));
    lattice.insert(lattice.end(), samples.begin(), samples.end());
  }
  require(!samples.empty(), Errc::NoUnoccludedView, "no unobstructed direction in mask");

  const KdTree clear_tree(samples);
  const KdTree all_tree(lattice);
  const std::size_t total = samples.size();
  std::vector<std::size_t> candidates(total);
  for (std::size_t i = 0; i < total; ++i) candidates[i] = i;
  double r = spacing + increment;
  while (candidates.size() > 1) {
    const double chord = 2.0 * std::sin(std::min(r, kPi) / 2.0) + 1e-12;
    std::vector<std::size_t> clear(candidates.size()), all(candidates.size());
    std::size_t best_q = 0, max_clear = 0;
    for (std::size_t q = 0; q < candidates.size(); ++q) {
      clear[q] = clear_tree.radius_count(samples[candidates[q]], chord);
      all[q] = all_tree.radius_count(samples[candidates[q]], chord);
      max_clear = std::max(max_clear, clear[q]);
      // clear/all > best, cross-multiplied to stay exact.
      if (clear[q] * all[best_q] > clear[best_q] * all[q]) best_q = q;
    }
    std::vector<std::size_t> next;
    for (std::size_t q = 0; q < candidates.size(); ++q)
      if (clear[q] * all[best_q] == clear[best_q] * all[q]) next.push_back(candidates[q]);
    candidates = std::move(next);
    r += spacing;
    if (max_clear == total) break;
  }
  return samples[candidates[uniform_index(rng, candidates.size())]];
}

/// Hull used for adaptive viewpoints. Flat inputs with no 3D hull fall back to
/// the two largest OBB faces, pushed off the mid-plane by at least 1 mm.
inline TriangleMesh hull_or_obb_faces(const PointCloud& plant) {
  try {
    return convex_hull(plant);
  } catch (const Error& e) {
    if (e.code() != Errc::DegenerateHull) throw;
  }
  const Obb box = compute_obb(plant);
  TriangleMesh mesh;
  const Vec3 u = box.axis(0) * box.half_extents[0];
  const Vec3 v = box.axis(1) * box.half_extents[1];
  const double offset = std::max(box.half_extents[2], 1e-3);
  for (double side : {1.0, -1.0}) {
    const Vec3 c = box.center + side * offset * box.least_axis();
    const int base = static_cast<int>(mesh.vertices.size());
    mesh.vertices.insert(mesh.vertices.end(), {c - u - v, c + u - v, c + u + v, c - u + v});
    if (side > 0) {
      mesh.triangles.push_back({base, base + 1, base + 2});
      mesh.triangles.push_back({base, base + 2, base + 3});
    } else {
      mesh.triangles.push_back({base, base + 2, base + 1});
      mesh.triangles.push_back({base, base + 3, base + 2});
    }
  }
  return mesh;
}

/// Hemisphere for a plant part: centered on the part centroid, facing the
/// part's front, with azimuth measured from the direction pointing away from
/// the plant centroid (falling back to the OBB major axis).
inline DirectionalHemisphere part_hemisphere(const PointCloud& plant, const PointCloud& part, const NbvParams& p) {
  const Obb box = compute_obb(part);
  const Vec3 front = part_front(box, p.sensor_up);
  const Vec3 center = centroid(part.points);
  Vec3 ref = center - centroid(plant.points);
  ref -= ref.dot(front) * front;
  if (ref.norm() < 1e-6) ref = box.axis(0);
  return DirectionalHemisphere(center, front, ref, p.sight_distance, p.bin_deg);
}

struct AvpResult {
  Viewpoint viewpoint;
  ProjectionMask search_region;  // D_max
  std::size_t polygon = 0;
};

/// Adaptive viewpoint for one plant part. Each hull polygon is projected onto
/// the part's hemisphere, minus the projection of the rest of the plant; the
/// polygon with the most clear bins is searched for its largest gap.
inline AvpResult estimate_avp_detailed(const PointCloud& plant, std::span<const std::size_t> part_indices,
                                       const TriangleMesh& hull, const NbvParams& p) {
  require(!part_indices.empty(), Errc::EmptyInput, "AVP for an empty part");
  const PointCloud part = subset(plant, part_indices);
  const DirectionalHemisphere hemi = part_hemisphere(plant, part, p);

  std::vector<char> in_part(plant.size(), 0);
  for (auto i : part_indices) in_part[i] = 1;
  std::vector<Vec3> occluders;
  for (std::size_t i = 0; i < plant.size(); ++i)
    if (!in_part[i]) occluders.push_back(plant.points[i]);
  const KdTree tree(plant.points);
  const auto radii = local_splat_radii(occluders, tree, p.splat_factor);
  const ProjectionMask occluded = project_to_hemisphere(hemi, occluders, radii);

  const auto polygons = hull_polygons(hull);
  AvpResult best{hemi.viewpoint(hemi.main_direction()), ProjectionMask::empty_for(hemi), 0};
  std::size_t best_count = 0;
  for (std::size_t j = 0; j < polygons.size(); ++j) {
    auto mask = ProjectionMask::empty_for(hemi);
    project_triangles(hemi, hull, polygons[j], mask);
    auto diff = mask_difference(mask, occluded);
    const std::size_t c = diff.count();
    if (c > best_count) {
      best_count = c;
      best.search_region = std::move(diff);
      best.polygon = j;
    }
  }
  require(best_count > 0, Errc::NoUnoccludedView, "every hull window is occluded");

  Rng rng = substream(p.seed, "avp", part_indices.front());
  const Vec3 dir = max_gap_point(hemi, best.search_region, p.gap_spacing, p.gap_increment, rng);
  best.viewpoint = hemi.viewpoint(dir, ViewKind::AVP);
  return best;
}

inline Viewpoint estimate_avp(const PointCloud& plant, std::span<const std::size_t> part_indices,
                              const TriangleMesh& hull, const NbvParams& p = {}) {
  return estimate_avp_detailed(plant, part_indices, hull, p).viewpoint;
}

}  // namespace plantscan
