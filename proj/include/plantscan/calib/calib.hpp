#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/lightfield/dataset.hpp>
#include <plantscan/lightfield/render.hpp>
#include <plantscan/neref/neref.hpp>
#include <plantscan/pointcloud/kdtree.hpp>
#include <plantscan/pointcloud/ply.hpp>
#include <plantscan/pointcloud/point_cloud.hpp>

#include <functional>
#include <iomanip>
#include <ostream>
#include <string_view>
#include <vector>

namespace plantscan {

struct DarkCurrent {
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(kBandCount);  // DN per band

  static DarkCurrent from(const Spectrum& s) { return {Eigen::VectorXd(s)}; }
};

/// Per-band dark offset removed from every pixel, clamped at zero.
inline DnFrame subtract_dark(const DnFrame& frame, const DarkCurrent& dark) {
  require(dark.offset.size() == static_cast<Eigen::Index>(kBandCount), Errc::BandMismatch,
          "dark current has " + std::to_string(dark.offset.size()) + " bands, expected " +
              std::to_string(kBandCount));
  require((dark.offset.array() >= 0).all(), Errc::Precondition, "dark current must be nonnegative");
  require(frame.has_dn(), Errc::MissingChannel, "frame has no DN channel");
  DnFrame out = frame;
  const Spectrum d = dark.offset;
  for (auto& s : out.dn) s = (s - d).cwiseMax(0.0);
  return out;
}

enum class Provenance { HR, FR };

inline std::string_view to_string(Provenance p) { return p == Provenance::HR ? "HR" : "FR"; }

/// Reflectance image in fractions. Only plant pixels are ever valid; the
/// geometry channels are carried over from the DN frame.
struct ReflectanceFrame {
  Provenance provenance = Provenance::HR;
  CameraIntrinsics camera;
  Viewpoint viewpoint;
  std::vector<Spectrum> reflectance;
  std::vector<std::uint8_t> valid;
  std::vector<PixelLabel> mask;
  std::vector<double> depth;
  std::vector<Vec3> normals;
  std::vector<std::int64_t> point_index;

  std::size_t size() const { return reflectance.size(); }
  std::size_t valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1)); }
  Vec3 surface_point(std::size_t i) const {
    const int u = static_cast<int>(i % camera.width), v = static_cast<int>(i / camera.width);
    return viewpoint.position + depth[i] * (viewpoint.frame * camera.ray(u, v));
  }
};

struct CalibParams {
  double denominator_floor = 1.0;  // DN
  double max_reflectance = 1.5;
};

/// Maps light-field features to reference DN spectra (dark-subtracted).
using ReferencePredictor = std::function<std::vector<Spectrum>(const std::vector<LightFieldFeature>&)>;

namespace detail {

inline ReflectanceFrame empty_reflectance(const DnFrame& f, Provenance p) {
  ReflectanceFrame r;
  r.provenance = p;
  r.camera = f.camera;
  r.viewpoint = f.viewpoint;
  r.reflectance.assign(f.size(), Spectrum::Zero());
  r.valid.assign(f.size(), 0);
  r.mask = f.mask;
  r.depth = f.depth;
  r.normals = f.normals;
  r.point_index = f.point_index;
  return r;
}

/// Band-wise ratio; bands whose denominator is under the floor read 0 and
/// invalidate the pixel, as does any ratio above the anomaly ceiling.
inline bool divide(const Spectrum& num, const Spectrum& den, const CalibParams& p, Spectrum& out) {
  bool ok = true;
  for (std::size_t b = 0; b < kBandCount; ++b) {
    if (den[b] < p.denominator_floor) {
      out[b] = 0;
      ok = false;
    } else {
      out[b] = num[b] / den[b];
      ok = ok && out[b] <= p.max_reflectance;
    }
  }
  return ok;
}

}  // namespace detail

/// Plant DN over the reference DN predicted for each pixel's own (v, n).
inline ReflectanceFrame hr_calibrate(const DnFrame& frame, const ReferencePredictor& predict,
                                     const CalibParams& params = {}) {
  require(frame.has_dn(), Errc::MissingChannel, "frame has no DN channel");
  const auto samples = extract_features(frame, PixelLabel::Plant);
  ReflectanceFrame r = detail::empty_reflectance(frame, Provenance::HR);
  if (samples.empty()) return r;
  std::vector<LightFieldFeature> feats;
  feats.reserve(samples.size());
  for (const auto& s : samples) feats.push_back(s.feature);
  const auto ref = predict(feats);
  require(ref.size() == feats.size(), Errc::Precondition, "reference predictor returned the wrong count");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t k = samples[i].pixel;
    r.valid[k] = detail::divide(frame.dn[k], ref[i], params, r.reflectance[k]) ? 1 : 0;
  }
  return r;
}

inline ReflectanceFrame hr_calibrate(const DnFrame& frame, const NerefModel& model, const CalibParams& params = {}) {
  require(model.trained, Errc::ModelNotReady, "reference field has not been trained");
  return hr_calibrate(
      frame, [&](const std::vector<LightFieldFeature>& f) { return predict_reference_dn(model, f); }, params);
}

/// Plant DN over one flat-reference spectrum shared by every pixel.
inline ReflectanceFrame fr_calibrate(const DnFrame& frame, const Spectrum& flat_ref_dn, const CalibParams& params = {}) {
  require(frame.has_dn(), Errc::MissingChannel, "frame has no DN channel");
  for (std::size_t b = 0; b < kBandCount; ++b)
    require(flat_ref_dn[b] > 0 && std::isfinite(flat_ref_dn[b]), Errc::BandInvalid,
            "flat reference band " + std::to_string(b) + " is not positive");
  ReflectanceFrame r = detail::empty_reflectance(frame, Provenance::FR);
  for (std::size_t k = 0; k < frame.size(); ++k)
    if (frame.mask[k] == PixelLabel::Plant)
      r.valid[k] = detail::divide(frame.dn[k], flat_ref_dn, params, r.reflectance[k]) ? 1 : 0;
  return r;
}

/// Dark-subtracted DN of a horizontal panel of the reference material seen
/// from straight above at `sight`, averaged over the panel pixels.
inline Spectrum flat_reference_dn(const Material& reference, const LightField& light, const CameraIntrinsics& camera,
                                  const RenderOptions& opt, double sight = 0.5, const Vec3& center = Vec3::Zero()) {
  SceneModel s;
  s.spacing = 0.002;
  s.reference.center = center + Vec3(1e3, 0, 0);
  Leaf panel;
  panel.material = reference;
  for (int i = -25; i <= 25; ++i)
    for (int j = -25; j <= 25; ++j) {
      s.plant.points.push_back(center + Vec3(i * s.spacing, j * s.spacing, 0));
      s.plant.normals.push_back(Vec3::UnitZ());
      s.leaf_of.push_back(0);
      s.edge_distance.push_back(s.spacing * (25 - std::max(std::abs(i), std::abs(j))));
    }
  panel.end = s.plant.size();
  panel.normal = Vec3::UnitZ();
  panel.center = center;
  s.leaves.push_back(panel);
  s.ground_height = center.z() - 1.0;
  Viewpoint vp;
  vp.id = -1;
  vp.position = center + sight * Vec3::UnitZ();
  vp.frame = meridian_frame(Vec3::UnitZ(), Vec3::UnitZ(), Vec3::UnitX());
  vp.sight_distance = sight;
  RenderOptions ro = opt;
  ro.include_reference = false;
  const DnFrame f = subtract_dark(render_frame(s, vp, light, camera, ro), DarkCurrent::from(opt.dark));
  Spectrum sum = Spectrum::Zero();
  std::size_t n = 0;
  for (std::size_t k = 0; k < f.size(); ++k)
    if (f.mask[k] == PixelLabel::Plant) {
      sum += f.dn[k];
      ++n;
    }
  require(n > 0, Errc::DegenerateView, "flat reference panel not visible");
  return sum / static_cast<double>(n);
}

/// Per-band mean over the valid pixels listed in `roi`.
inline Spectrum roi_spectrum(const ReflectanceFrame& frame, const std::vector<std::size_t>& roi) {
  Spectrum sum = Spectrum::Zero();
  std::size_t n = 0;
  for (auto k : roi) {
    require(k < frame.size(), Errc::Precondition, "roi pixel out of range");
    if (!frame.valid[k]) continue;
    sum += frame.reflectance[k];
    ++n;
  }
  require(n > 0, Errc::EmptyRoi, "roi has no valid pixels");
  return sum / static_cast<double>(n);
}

/// Per-band mean over the listed points that carry a spectrum.
inline Spectrum roi_spectrum(const PointCloud& mpc, const std::vector<std::size_t>& roi) {
  require(mpc.has_bands(), Errc::MissingChannel, "cloud has no spectra");
  Spectrum sum = Spectrum::Zero();
  std::size_t n = 0;
  for (auto i : roi) {
    require(i < mpc.size(), Errc::Precondition, "roi point out of range");
    if (!mpc.has_spectrum(i)) continue;
    sum += mpc.bands[i];
    ++n;
  }
  require(n > 0, Errc::EmptyRoi, "roi has no points with spectra");
  return sum / static_cast<double>(n);
}

/// Sphere-shaped roi in a multispectral cloud.
inline Spectrum roi_spectrum(const PointCloud& mpc, const KdTree& tree, const Vec3& center, double radius) {
  return roi_spectrum(mpc, tree.radius_search(center, radius));
}

/// Valid pixels as a vertex table with one `refl_<nm>` property per band.
inline PlyTable reflectance_ply_table(const ReflectanceFrame& frame) {
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < frame.size(); ++k)
    if (frame.valid[k]) keep.push_back(k);
  PlyTable t;
  const std::size_t n = keep.size();
  const char* xyz[] = {"x", "y", "z"};
  const char* nxyz[] = {"nx", "ny", "nz"};
  for (int a = 0; a < 3; ++a) {
    auto& col = t.add(xyz[a], PlyType::Float64, n);
    for (std::size_t i = 0; i < n; ++i) col[i] = frame.surface_point(keep[i])[a];
  }
  for (int a = 0; a < 3; ++a) {
    auto& col = t.add(nxyz[a], PlyType::Float32, n);
    for (std::size_t i = 0; i < n; ++i) col[i] = frame.normals[keep[i]][a];
  }
  for (std::size_t b = 0; b < kBandCount; ++b) {
    auto& col = t.add(band_property("refl", b), PlyType::Float32, n);
    for (std::size_t i = 0; i < n; ++i) col[i] = frame.reflectance[keep[i]][static_cast<int>(b)];
  }
  return t;
}

struct RoiSpectrum {
  std::string plant;
  int roi = 0;
  Provenance provenance = Provenance::HR;
  Spectrum reflectance = Spectrum::Zero();
};

inline void write_roi_csv(std::ostream& os, const std::vector<RoiSpectrum>& rows) {
  os << "plant,roi,calibration";
  for (std::size_t b = 0; b < kBandCount; ++b) os << ',' << band_property("refl", b);
  os << '\n' << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.plant << ',' << r.roi << ',' << to_string(r.provenance);
    for (std::size_t b = 0; b < kBandCount; ++b) os << ',' << r.reflectance[b];
    os << '\n';
  }
}

}  // namespace plantscan
