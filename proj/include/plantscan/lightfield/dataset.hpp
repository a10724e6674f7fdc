#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/rng.hpp>
#include <plantscan/lightfield/render.hpp>
#include <plantscan/nbv/nbv.hpp>
#include <plantscan/pointcloud/ply.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <vector>

namespace plantscan {

struct PixelSample {
  LightFieldFeature feature;
  Spectrum dn = Spectrum::Zero();
  std::int64_t point_index = -1;
  std::size_t pixel = 0;
  PixelLabel label = PixelLabel::Background;
};

/// Light-field feature and DN of every foreground pixel (optionally only
/// those carrying `only`): v points from the surface toward the camera.
inline std::vector<PixelSample> extract_features(const DnFrame& frame,
                                                 std::optional<PixelLabel> only = std::nullopt) {
  require(frame.has_normals(), Errc::MissingChannel, "frame has no normals");
  require(frame.has_depth(), Errc::MissingChannel, "frame has no depth");
  std::vector<PixelSample> out;
  for (std::size_t k = 0; k < frame.size(); ++k) {
    if (!frame.foreground(k) || (only && frame.mask[k] != *only)) continue;
    PixelSample s;
    s.feature = {(-frame.world_ray(k)).normalized(), frame.normals[k].normalized()};
    if (frame.has_dn()) s.dn = frame.dn[k];
    s.point_index = frame.point_index[k];
    s.pixel = k;
    s.label = frame.mask[k];
    out.push_back(s);
  }
  return out;
}

struct ReferenceDataset {
  std::vector<LightFieldFeature> features;
  std::vector<Spectrum> dn;  // as rendered, dark current included
  std::vector<Viewpoint> viewpoints;

  std::size_t size() const { return features.size(); }
};

/// Renders the reference hemisphere alone from every viewpoint of a
/// `grid_deg` hemisphere grid at `sight` and collects its pixels. With
/// `max_per_frame` > 0 each frame contributes a seeded random subset.
inline ReferenceDataset reference_dataset(const SceneModel& scene, const LightField& light, double grid_deg,
                                          double sight, const CameraIntrinsics& camera, const RenderOptions& opt = {},
                                          std::size_t max_per_frame = 0) {
  require(grid_deg > 0 && std::abs(90.0 / grid_deg - std::round(90.0 / grid_deg)) < 1e-9, Errc::Precondition,
          "grid spacing must divide 90 degrees");
  const SceneModel ref_scene = scene.reference_only();
  ReferenceDataset data;
  data.viewpoints = hemisphere_grid_viewpoints(scene.reference.center, sight, grid_deg);
  RenderOptions ro = opt;
  ro.include_reference = true;
  for (const auto& vp : data.viewpoints) {
    const DnFrame frame = render_frame(ref_scene, vp, light, camera, ro);
    auto samples = extract_features(frame, PixelLabel::Reference);
    if (max_per_frame > 0 && samples.size() > max_per_frame) {
      Rng rng = substream(opt.seed, "reference-subsample", static_cast<std::uint64_t>(vp.id));
      std::vector<std::size_t> idx(samples.size());
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = 0; i < max_per_frame; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
      idx.resize(max_per_frame);
      std::sort(idx.begin(), idx.end());
      std::vector<PixelSample> kept;
      for (auto i : idx) kept.push_back(samples[i]);
      samples = std::move(kept);
    }
    for (const auto& s : samples) {
      data.features.push_back(s.feature);
      data.dn.push_back(s.dn);
    }
  }
  return data;
}

/// Foreground pixels as a vertex table: world position, normal, label,
/// plant point index and one `dn_<nm>` property per band.
inline PlyTable frame_ply_table(const DnFrame& frame) {
  std::vector<std::size_t> fg;
  for (std::size_t k = 0; k < frame.size(); ++k)
    if (frame.foreground(k)) fg.push_back(k);
  PlyTable t;
  const std::size_t n = fg.size();
  const char* xyz[] = {"x", "y", "z"};
  const char* nxyz[] = {"nx", "ny", "nz"};
  for (int a = 0; a < 3; ++a) {
    auto& col = t.add(xyz[a], PlyType::Float64, n);
    for (std::size_t i = 0; i < n; ++i) col[i] = frame.surface_point(fg[i])[a];
  }
  for (int a = 0; a < 3; ++a) {
    auto& col = t.add(nxyz[a], PlyType::Float32, n);
    for (std::size_t i = 0; i < n; ++i) col[i] = frame.normals[fg[i]][a];
  }
  auto& label = t.add("label", PlyType::UInt8, n);
  auto& index = t.add("point_index", PlyType::Int32, n);
  for (std::size_t i = 0; i < n; ++i) {
    label[i] = static_cast<double>(frame.mask[fg[i]]);
    index[i] = static_cast<double>(frame.point_index[fg[i]]);
  }
  if (frame.has_dn())
    for (std::size_t b = 0; b < kBandCount; ++b) {
      auto& col = t.add(band_property("dn", b), PlyType::Float32, n);
      for (std::size_t i = 0; i < n; ++i) col[i] = frame.dn[fg[i]][static_cast<int>(b)];
    }
  return t;
}

/// One row per frame: viewpoint pose, camera intrinsics and light field.
inline void write_frame_manifest(std::ostream& os, const std::vector<DnFrame>& frames, const LightField& light) {
  os << "viewpoint_id,kind,x,y,z,qw,qx,qy,qz,width,height,fx,fy,cx,cy,light_x,light_y,light_z";
  for (std::size_t b = 0; b < kBandCount; ++b) os << ',' << band_property("ipar", b);
  for (std::size_t b = 0; b < kBandCount; ++b) os << ',' << band_property("idiff", b);
  os << '\n' << std::setprecision(17);
  for (const auto& f : frames) {
    const auto& v = f.viewpoint;
    const auto q = v.quaternion();
    const auto& k = f.camera;
    os << v.id << ',' << to_string(v.kind) << ',' << v.position.x() << ',' << v.position.y() << ',' << v.position.z()
       << ',' << q.w() << ',' << q.x() << ',' << q.y() << ',' << q.z() << ',' << k.width << ',' << k.height << ','
       << k.fx << ',' << k.fy << ',' << k.cx << ',' << k.cy << ',' << light.direction.x() << ','
       << light.direction.y() << ',' << light.direction.z();
    for (std::size_t b = 0; b < kBandCount; ++b) os << ',' << light.parallel[b];
    for (std::size_t b = 0; b < kBandCount; ++b) os << ',' << light.diffuse[b];
    os << '\n';
  }
}

}  // namespace plantscan
