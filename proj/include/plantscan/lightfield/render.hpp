#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/rng.hpp>
#include <plantscan/lightfield/camera.hpp>
#include <plantscan/lightfield/scene.hpp>
#include <plantscan/lightfield/shading.hpp>
#include <plantscan/nbv/viewpoint.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

namespace plantscan {

enum class PixelLabel : std::uint8_t { Background = 0, Plant = 1, Reference = 2 };

/// One rendered view. Per-pixel channels are row-major; `depth` is the
/// camera-frame z (NaN on background) and `normals` are world-frame unit
/// normals facing the camera.
struct DnFrame {
  CameraIntrinsics camera;
  Viewpoint viewpoint;
  std::vector<Spectrum> dn;  // empty when rendered without shading
  std::vector<double> depth;
  std::vector<Vec3> normals;
  std::vector<PixelLabel> mask;
  std::vector<std::int64_t> point_index;  // plant point per pixel, -1 elsewhere

  std::size_t size() const { return mask.size(); }
  bool has_dn() const { return !dn.empty(); }
  bool has_depth() const { return !depth.empty(); }
  bool has_normals() const { return !normals.empty(); }
  bool foreground(std::size_t i) const { return mask[i] != PixelLabel::Background; }

  /// World-frame direction from the camera center through pixel `i`, unnormalized
  /// with unit camera-frame depth.
  Vec3 world_ray(std::size_t i) const {
    const int u = static_cast<int>(i % camera.width), v = static_cast<int>(i / camera.width);
    return viewpoint.frame * camera.ray(u, v);
  }
  /// World-frame surface point seen at pixel `i`.
  Vec3 surface_point(std::size_t i) const { return viewpoint.position + depth[i] * world_ray(i); }
  std::size_t count(PixelLabel label) const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), label)); }
};

struct RenderOptions {
  double splat_factor = 1.5;               // splat radius over the sampling spacing
  Spectrum dark = Spectrum::Constant(8.0);  // dark-current offset added to every pixel
  double noise = 0.01;                     // Gaussian sigma relative to the shaded signal
  bool shade = true;
  bool include_reference = true;
  std::uint64_t seed = 0;
  double near = 1e-3;
};

namespace detail {

/// Ray against a solid reference hemisphere. Returns the entry distance along
/// `dir` (any length) and the outward normal, if the ray enters beyond `t_min`.
inline std::optional<std::pair<double, Vec3>> intersect_reference(const ReferenceSphere& ref, const Vec3& origin,
                                                                  const Vec3& dir, double t_min) {
  double best = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::Zero();
  const Vec3 oc = origin - ref.center;
  const double a = dir.squaredNorm(), b = 2 * oc.dot(dir), c = oc.squaredNorm() - ref.radius * ref.radius;
  const double disc = b * b - 4 * a * c;
  if (disc >= 0) {
    const double s = std::sqrt(disc);
    for (double t : {(-b - s) / (2 * a), (-b + s) / (2 * a)}) {
      const Vec3 hit = origin + t * dir;
      if (t > t_min && hit.z() >= ref.center.z() && t < best) {
        best = t;
        normal = (hit - ref.center) / ref.radius;
      }
    }
  }
  if (std::abs(dir.z()) > 1e-15) {
    const double t = (ref.center.z() - origin.z()) / dir.z();
    const Vec3 hit = origin + t * dir;
    if (t > t_min && (hit - ref.center).squaredNorm() <= ref.radius * ref.radius && t < best) {
      best = t;
      normal = -Vec3::UnitZ();
    }
  }
  if (!std::isfinite(best)) return std::nullopt;
  return std::make_pair(best, normal);
}

/// Distance along unit `dir` at which the ray from `origin` crosses the
/// disc (center p, normal n, radius r), if it does.
inline std::optional<double> intersect_disc(const Vec3& origin, const Vec3& dir, const Vec3& p, const Vec3& n,
                                            double r) {
  const double denom = n.dot(dir);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = n.dot(p - origin) / denom;
  if ((origin + t * dir - p).squaredNorm() > r * r) return std::nullopt;
  return t;
}

inline long long pack_cell(long long i, long long j) { return (i + (1LL << 30)) * (1LL << 31) + (j + (1LL << 30)); }

}  // namespace detail

/// Cast-shadow queries along the parallel light. Plant points are discs of
/// the splat radius; a point is shadowed when the ray toward the light
/// crosses another disc farther than one splat radius away, or enters the
/// reference solid. Closer crossings are tangent-plane artifacts of the
/// disc approximation on curved blades.
class ShadowCaster {
 public:
  ShadowCaster(const SceneModel& scene, const LightField& light, double splat_radius, bool include_reference)
      : scene_(scene), toward_(-light.direction.normalized()), r_(splat_radius), include_reference_(include_reference) {
    e1_ = any_orthogonal(toward_);
    e2_ = toward_.cross(e1_);
    cell_ = 2 * r_;
    const auto& pts = scene.plant.points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double a = pts[i].dot(e1_), b = pts[i].dot(e2_);
      const auto i0 = static_cast<long long>(std::floor((a - r_) / cell_));
      const auto i1 = static_cast<long long>(std::floor((a + r_) / cell_));
      const auto j0 = static_cast<long long>(std::floor((b - r_) / cell_));
      const auto j1 = static_cast<long long>(std::floor((b + r_) / cell_));
      for (auto ci = i0; ci <= i1; ++ci)
        for (auto cj = j0; cj <= j1; ++cj) grid_[detail::pack_cell(ci, cj)].push_back(i);
    }
  }

  const Vec3& toward_light() const { return toward_; }
  double splat_radius() const { return r_; }

  /// Whether the ray from `x` toward the light is blocked. `self` is a plant
  /// point index to ignore (-1 for none); plant crossings nearer than
  /// `min_plant_t` are ignored.
  bool blocked(const Vec3& x, std::int64_t self, double min_plant_t, bool test_reference = true) const {
    if (include_reference_ && test_reference && detail::intersect_reference(scene_.reference, x, toward_, 1e-9))
      return true;
    const auto ci = static_cast<long long>(std::floor(x.dot(e1_) / cell_));
    const auto cj = static_cast<long long>(std::floor(x.dot(e2_) / cell_));
    const auto it = grid_.find(detail::pack_cell(ci, cj));
    if (it == grid_.end()) return false;
    for (std::size_t i : it->second) {
      if (static_cast<std::int64_t>(i) == self) continue;
      const auto t = detail::intersect_disc(x, toward_, scene_.plant.points[i], scene_.plant.normals[i], r_);
      if (t && *t > min_plant_t) return true;
    }
    return false;
  }

  /// Shadow state of plant point `i`.
  bool plant_point_shadowed(std::size_t i) const {
    return blocked(scene_.plant.points[i], static_cast<std::int64_t>(i), r_);
  }

 private:
  const SceneModel& scene_;
  Vec3 toward_, e1_, e2_;
  double r_, cell_;
  bool include_reference_;
  std::unordered_map<long long, std::vector<std::size_t>> grid_;
};

/// Throws DegenerateView when the camera center is below the ground, inside
/// the reference solid, or within a splat radius of a plant point.
inline void check_view(const SceneModel& scene, const Viewpoint& vp, double splat_radius, bool include_reference) {
  const Vec3& c = vp.position;
  require(c.allFinite(), Errc::DegenerateView, "viewpoint position is not finite");
  require(c.z() >= scene.ground_height, Errc::DegenerateView, "viewpoint below the ground plane");
  require(!(include_reference && scene.reference.contains(c)), Errc::DegenerateView,
          "viewpoint inside the reference hemisphere");
  for (const auto& p : scene.plant.points)
    require((p - c).norm() > splat_radius, Errc::DegenerateView, "viewpoint inside plant geometry");
}

namespace detail {

/// Inclusive pixel range covering the projection of a sphere along one image
/// axis: exact tangent bounds of the sphere's silhouette on that axis.
inline std::pair<int, int> sphere_pixel_range(double lateral, double depth, double radius, double f, double c,
                                              int size) {
  const double d = std::hypot(lateral, depth);
  if (d <= radius) return {0, size - 1};
  const double alpha = std::atan2(lateral, depth), beta = std::asin(radius / d);
  const double lo_ang = alpha - beta, hi_ang = alpha + beta;
  if (lo_ang >= kPi / 2 || hi_ang <= -kPi / 2) return {1, 0};
  const double lo = lo_ang <= -kPi / 2 ? -1e300 : f * std::tan(lo_ang) + c;
  const double hi = hi_ang >= kPi / 2 ? 1e300 : f * std::tan(hi_ang) + c;
  const int a = static_cast<int>(std::max(0.0, std::ceil(std::max(lo, -1e9))));
  const int b = static_cast<int>(std::min(static_cast<double>(size - 1), std::floor(std::min(hi, 1e9))));
  return {a, b};
}

}  // namespace detail

/// Surfel z-buffer render of the plant (discs of splat radius around each
/// point, oriented by its normal) and the analytic reference hemisphere.
/// Each visible surface is shaded with the light-field law, including cast
/// shadows, then offset by the dark current and perturbed by sensor noise.
inline DnFrame render_frame(const SceneModel& scene, const Viewpoint& vp, const LightField& light,
                            const CameraIntrinsics& camera, const RenderOptions& opt = {}) {
  camera.validate();
  light.validate();
  require(scene.plant.normals.size() == scene.plant.size(), Errc::MissingChannel, "scene points need normals");
  const double r = opt.splat_factor * scene.spacing;
  check_view(scene, vp, r, opt.include_reference);

  DnFrame frame;
  frame.camera = camera;
  frame.viewpoint = vp;
  const std::size_t npix = camera.pixel_count();
  frame.depth.assign(npix, std::numeric_limits<double>::infinity());
  frame.normals.assign(npix, Vec3::Zero());
  frame.mask.assign(npix, PixelLabel::Background);
  frame.point_index.assign(npix, -1);

  const Mat3 rt = vp.frame.transpose();
  const Vec3& eye = vp.position;
  for (std::size_t i = 0; i < scene.plant.size(); ++i) {
    const Vec3 p = rt * (scene.plant.points[i] - eye);
    if (p.z() + r <= opt.near) continue;
    const Vec3 n = rt * scene.plant.normals[i];
    const auto [u0, u1] = detail::sphere_pixel_range(p.x(), p.z(), r, camera.fx, camera.cx, camera.width);
    const auto [v0, v1] = detail::sphere_pixel_range(p.y(), p.z(), r, camera.fy, camera.cy, camera.height);
    for (int v = v0; v <= v1; ++v)
      for (int u = u0; u <= u1; ++u) {
        const Vec3 d = camera.ray(u, v);
        const double denom = n.dot(d);
        if (std::abs(denom) < 1e-12) continue;
        const double t = n.dot(p) / denom;
        if (t <= opt.near || (t * d - p).squaredNorm() > r * r) continue;
        const std::size_t k = camera.index(u, v);
        if (t < frame.depth[k]) {
          frame.depth[k] = t;
          frame.mask[k] = PixelLabel::Plant;
          frame.point_index[k] = static_cast<std::int64_t>(i);
        }
      }
  }

  if (opt.include_reference) {
    const auto& ref = scene.reference;
    const Vec3 c = rt * (ref.center - eye);
    const auto [u0, u1] = detail::sphere_pixel_range(c.x(), c.z(), ref.radius, camera.fx, camera.cx, camera.width);
    const auto [v0, v1] = detail::sphere_pixel_range(c.y(), c.z(), ref.radius, camera.fy, camera.cy, camera.height);
    for (int v = v0; v <= v1; ++v)
      for (int u = u0; u <= u1; ++u) {
        const Vec3 d = vp.frame * camera.ray(u, v);
        const auto hit = detail::intersect_reference(ref, eye, d, opt.near);
        if (!hit) continue;
        const std::size_t k = camera.index(u, v);
        if (hit->first < frame.depth[k]) {
          frame.depth[k] = hit->first;
          frame.mask[k] = PixelLabel::Reference;
          frame.normals[k] = hit->second;
          frame.point_index[k] = -1;
        }
      }
  }

  for (std::size_t k = 0; k < npix; ++k) {
    if (frame.mask[k] == PixelLabel::Background) {
      frame.depth[k] = std::numeric_limits<double>::quiet_NaN();
    } else if (frame.mask[k] == PixelLabel::Plant) {
      const Vec3 toward_eye = -frame.world_ray(k);
      const Vec3& n = scene.plant.normals[static_cast<std::size_t>(frame.point_index[k])];
      frame.normals[k] = n.dot(toward_eye) < 0 ? Vec3(-n) : n;
    }
  }
  if (!opt.shade) return frame;

  const ShadowCaster caster(scene, light, r, opt.include_reference);
  std::vector<std::int8_t> shadow(scene.plant.size(), -1);
  Rng rng = substream(opt.seed, "dn-noise", static_cast<std::uint64_t>(vp.id));
  frame.dn.assign(npix, Spectrum::Zero());
  for (std::size_t k = 0; k < npix; ++k) {
    if (frame.mask[k] == PixelLabel::Background) continue;
    const LightFieldFeature f{(-frame.world_ray(k)).normalized(), frame.normals[k]};
    Spectrum s;
    if (frame.mask[k] == PixelLabel::Plant) {
      const auto i = static_cast<std::size_t>(frame.point_index[k]);
      if (shadow[i] < 0) shadow[i] = caster.plant_point_shadowed(i) ? 1 : 0;
      s = shade_spectrum(f, scene.material_of(i), light, shadow[i] == 1);
    } else {
      const bool shadowed = caster.blocked(frame.surface_point(k), -1, 1e-9, false);
      s = shade_spectrum(f, scene.reference.material, light, shadowed);
    }
    if (opt.noise > 0)
      for (std::size_t b = 0; b < kBandCount; ++b)
        if (s[b] > 0) s[b] = std::max(0.0, s[b] + gaussian(rng, 0.0, opt.noise * s[b]));
    frame.dn[k] = s + opt.dark;
  }
  return frame;
}

}  // namespace plantscan
