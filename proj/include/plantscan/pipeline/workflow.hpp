#pragma once

#include <plantscan/analytics/analytics.hpp>
#include <plantscan/calib/calib.hpp>
#include <plantscan/core/error.hpp>
#include <plantscan/core/log.hpp>
#include <plantscan/core/rng.hpp>
#include <plantscan/fusion/fusion.hpp>
#include <plantscan/lightfield/dataset.hpp>
#include <plantscan/lightfield/render.hpp>
#include <plantscan/lightfield/scene.hpp>
#include <plantscan/nbv/nbv.hpp>
#include <plantscan/neref/neref.hpp>
#include <plantscan/planner/acquisition.hpp>
#include <plantscan/pointcloud/kdtree.hpp>
#include <plantscan/pointcloud/segmentation.hpp>

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace plantscan {

// ------------------------------------------------------------------ viewpoints

struct ViewpointSet {
  std::vector<Viewpoint> viewpoints;  // FVPs, then VVPs, then AVPs; id = position
  std::size_t parts = 0;
  std::vector<std::string> warnings;

  std::size_t count(ViewKind k) const {
    return static_cast<std::size_t>(
        std::count_if(viewpoints.begin(), viewpoints.end(), [k](const Viewpoint& v) { return v.kind == k; }));
  }
};

/// Face viewpoints of the plant box, one viewpoint per segmented part in front
/// of it, and one adaptive viewpoint per part. Parts with no clear view are
/// skipped with a warning.
inline ViewpointSet estimate_viewpoints(const PointCloud& plant, const NbvParams& nbv,
                                        const RegionGrowingParams& seg = {}) {
  require(!plant.empty(), Errc::EmptyInput, "plant cloud is empty");
  ViewpointSet out;
  const auto add = [&](Viewpoint v) {
    v.id = static_cast<int>(out.viewpoints.size());
    out.viewpoints.push_back(v);
  };
  for (const auto& v : estimate_fvps(compute_aabb(plant), nbv.sight_distance, nbv.exclude_downward)) add(v);
  const auto segments = region_growing_segment(plant, seg);
  out.parts = segments.size();
  std::vector<PointCloud> clusters;
  for (const auto& s : segments) clusters.push_back(subset(plant, s));
  for (const auto& v : estimate_vvps(clusters, nbv.sight_distance, nbv.sensor_up)) add(v);
  if (segments.empty()) return out;
  const TriangleMesh hull = hull_or_obb_faces(plant);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    try {
      add(estimate_avp(plant, segments[i], hull, nbv));
    } catch (const Error& e) {
      if (e.code() != Errc::NoUnoccludedView) throw;
      out.warnings.push_back("part " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

/// Viewpoints whose kind is in `kinds`, order kept.
inline std::vector<Viewpoint> select_kinds(const std::vector<Viewpoint>& vps, std::initializer_list<ViewKind> kinds) {
  std::vector<Viewpoint> out;
  for (const auto& v : vps)
    if (std::find(kinds.begin(), kinds.end(), v.kind) != kinds.end()) out.push_back(v);
  return out;
}

// --------------------------------------------------------------------- capture

struct CaptureSetup {
  CameraIntrinsics ms = ms_camera(64);
  CameraIntrinsics rgbd = rgbd_camera(160, 128);
  Pose ms_from_rgbd{Mat3::Identity(), Vec3(-0.03, 0.0, 0.0)};
  LightField light = default_light();
  RenderOptions render;
};

/// Multispectral image and depth image taken from one stop.
struct CapturedView {
  DnFrame ms, depth;
};

/// Renders both cameras with the multispectral camera at `world_from_ms`.
inline CapturedView capture_view(const SceneModel& scene, const Viewpoint& stop, const Pose& world_from_ms,
                                 const CaptureSetup& setup, std::uint64_t seed) {
  validate_rigid(setup.ms_from_rgbd);
  Viewpoint ms_vp = stop;
  ms_vp.position = world_from_ms.translation;
  ms_vp.frame = world_from_ms.rotation;
  Viewpoint depth_vp = ms_vp;
  const Pose world_from_rgbd = world_from_ms * setup.ms_from_rgbd;
  depth_vp.position = world_from_rgbd.translation;
  depth_vp.frame = world_from_rgbd.rotation;
  RenderOptions o = setup.render;
  o.seed = splitmix64(seed ^ 0x6d73);
  CapturedView v;
  v.ms = render_frame(scene, ms_vp, setup.light, setup.ms, o);
  o.seed = splitmix64(seed ^ 0x6470);
  o.shade = false;
  v.depth = render_frame(scene, depth_vp, setup.light, setup.rgbd, o);
  return v;
}

/// Reference-field training pairs with the dark offset removed.
inline std::vector<FieldSample> reference_pairs(const ReferenceDataset& data, const Spectrum& dark) {
  std::vector<FieldSample> pairs;
  pairs.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) pairs.push_back({data.features[i], (data.dn[i] - dark).cwiseMax(0.0)});
  return pairs;
}

// ---------------------------------------------------------------- calibration

struct CalibratedView {
  ReflectanceFrame hr, fr;
};

inline CalibratedView calibrate_view(const DnFrame& ms, const Spectrum& dark, const NerefModel& model,
                                     const Spectrum& flat_ref_dn, const CalibParams& params = {}) {
  const DnFrame clean = subtract_dark(ms, DarkCurrent::from(dark));
  return {hr_calibrate(clean, model, params), fr_calibrate(clean, flat_ref_dn, params)};
}

// --------------------------------------------------------------------- fusion

/// One aligned view ready for fusion: the depth-camera cloud with spectra and
/// the pose placing it in the world frame.
struct PlacedView {
  ViewKind kind = ViewKind::FVP;
  Frame3dmpc frame;
  Pose world_from_rgbd;
};

/// Drops samples that do not lie on the plant (reference target, ground).
inline Frame3dmpc plant_points_only(const Frame3dmpc& f) {
  Frame3dmpc out;
  out.viewpoint_id = f.viewpoint_id;
  for (std::size_t i = 0; i < f.cloud.size(); ++i) {
    if (f.point_index[i] < 0) continue;
    out.cloud.points.push_back(f.cloud.points[i]);
    if (f.cloud.has_normals()) out.cloud.normals.push_back(f.cloud.normals[i]);
    if (f.cloud.has_bands()) out.cloud.bands.push_back(f.cloud.bands[i]);
    out.point_index.push_back(f.point_index[i]);
  }
  return out;
}

/// Pose of the depth camera from the arm's flange pose and the camera chain.
inline Pose depth_camera_pose(const Pose& world_from_flange, const Pose& flange_from_ms, const Pose& ms_from_rgbd) {
  return orthonormalized(world_from_flange) * orthonormalized(flange_from_ms) * ms_from_rgbd;
}

/// Fuses the views whose kind is listed in `kinds`.
inline FusionResult fuse_kinds(const std::vector<PlacedView>& views, const std::vector<ViewKind>& kinds,
                               const FuseParams& params) {
  std::vector<Frame3dmpc> frames;
  std::vector<Pose> poses;
  for (const auto& v : views)
    if (std::find(kinds.begin(), kinds.end(), v.kind) != kinds.end()) {
      frames.push_back(v.frame);
      poses.push_back(v.world_from_rgbd);
    }
  return fuse_frames(frames, poses, params);
}

// ----------------------------------------------------------------- evaluation

/// One ROI measured in a fused cloud.
struct RoiMeasurement {
  int leaf = 0;
  double spad = 0;
  Spectrum truth = Spectrum::Zero();
  std::optional<Spectrum> fused;  // mean over the ROI, none if nothing was measured
  SpectrumSet views;              // per-view ROI means, with the truth attached

  std::optional<double> rmse() const {
    if (views.views.empty()) return std::nullopt;
    return spectral_rmse(views);
  }
  std::optional<double> ed() const {
    if (views.views.size() < 2) return std::nullopt;
    return ed_range(views);
  }
};

/// Looks up every ROI of `rois` in a fused cloud by radius search around the
/// ROI's center point.
inline std::vector<RoiMeasurement> measure_rois(const SceneModel& scene, const std::vector<SpadSample>& rois,
                                                const FusionResult& fused, double radius) {
  std::vector<RoiMeasurement> out;
  const KdTree tree(fused.cloud.points);
  for (const auto& roi : rois) {
    RoiMeasurement m;
    m.leaf = roi.leaf;
    m.spad = roi.spad;
    m.truth = roi.spectrum;
    m.views.ground_truth = roi.spectrum;
    const auto members = fused.cloud.empty() ? std::vector<std::size_t>{}
                                             : tree.radius_search(scene.plant.points[roi.center], radius);
    Spectrum sum = Spectrum::Zero();
    std::size_t n = 0;
    std::map<int, std::pair<Spectrum, std::size_t>> per_view;
    for (auto i : members) {
      if (!fused.cloud.has_spectrum(i)) continue;
      sum += fused.cloud.bands[i];
      ++n;
      for (const auto& v : fused.views[i]) {
        auto& acc = per_view.try_emplace(v.viewpoint_id, Spectrum::Zero(), 0).first->second;
        acc.first += v.reflectance;
        ++acc.second;
      }
    }
    if (n > 0) m.fused = Spectrum(sum / static_cast<double>(n));
    for (const auto& [id, acc] : per_view) m.views.views.push_back(acc.first / static_cast<double>(acc.second));
    out.push_back(std::move(m));
  }
  return out;
}

struct RoiSummary {
  std::size_t rois = 0, measured = 0;
  double mean_rmse = std::numeric_limits<double>::quiet_NaN();
  double mean_ed = std::numeric_limits<double>::quiet_NaN();
  double max_ed = std::numeric_limits<double>::quiet_NaN();
};

inline RoiSummary summarize(const std::vector<RoiMeasurement>& rois) {
  RoiSummary s;
  s.rois = rois.size();
  double rsum = 0, esum = 0;
  std::size_t ne = 0;
  for (const auto& r : rois) {
    if (const auto e = r.rmse()) {
      rsum += *e;
      ++s.measured;
    }
    if (const auto e = r.ed()) {
      esum += *e;
      ++ne;
      s.max_ed = std::isnan(s.max_ed) ? *e : std::max(s.max_ed, *e);
    }
  }
  if (s.measured) s.mean_rmse = rsum / static_cast<double>(s.measured);
  if (ne) s.mean_ed = esum / static_cast<double>(ne);
  return s;
}

struct PlsrComparison {
  std::vector<RegressionMetrics> hr, fr;  // one per repetition
  std::vector<int> hr_components, fr_components;
  std::size_t train = 0, validation = 0, test = 0;
  std::size_t hr_wins = 0;
};

/// Repeated seeded train/validation/test splits of ROI samples; PLSR maps
/// spectra to SPAD for both calibrations on the same split.
inline PlsrComparison compare_plsr(const std::vector<Spectrum>& hr, const std::vector<Spectrum>& fr,
                                   const std::vector<double>& spad, int repetitions, double test_fraction,
                                   double validation_fraction, int max_components, std::uint64_t seed) {
  const std::size_t n = spad.size();
  require(hr.size() == n && fr.size() == n, Errc::Precondition, "one HR and FR spectrum per SPAD value");
  require(repetitions >= 1 && test_fraction > 0 && validation_fraction > 0 && test_fraction + validation_fraction < 1,
          Errc::Precondition, "invalid PLSR split");
  PlsrComparison out;
  out.test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n)));
  out.validation = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(n)));
  require(out.test >= 2 && out.validation >= 2 && n > out.test + out.validation + 2, Errc::InsufficientPoints,
          "too few ROI samples for PLSR");
  out.train = n - out.test - out.validation;
  const auto block = [](const std::vector<Spectrum>& s, const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(kBandCount));
    for (std::size_t r = 0; r < idx.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = s[idx[r]].transpose();
    return x;
  };
  const auto target = [&](const std::vector<std::size_t>& idx) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) y[static_cast<Eigen::Index>(r)] = spad[idx[r]];
    return y;
  };
  for (int rep = 0; rep < repetitions; ++rep) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = substream(seed, "plsr-split", static_cast<std::uint64_t>(rep));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    const std::vector<std::size_t> tr(order.begin(), order.begin() + static_cast<long>(out.train));
    const std::vector<std::size_t> va(order.begin() + static_cast<long>(out.train),
                                      order.begin() + static_cast<long>(out.train + out.validation));
    const std::vector<std::size_t> te(order.begin() + static_cast<long>(out.train + out.validation), order.end());
    for (auto* which : {&hr, &fr}) {
      const auto model = plsr_select(block(*which, tr), target(tr), block(*which, va), target(va), max_components);
      const auto m = plsr_eval(model, block(*which, te), target(te));
      (which == &hr ? out.hr : out.fr).push_back(m);
      (which == &hr ? out.hr_components : out.fr_components).push_back(model.components);
    }
    out.hr_wins += out.hr.back().r2 >= out.fr.back().r2 ? 1 : 0;
  }
  return out;
}

}  // namespace plantscan
