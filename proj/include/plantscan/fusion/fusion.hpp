#pragma once

#include <plantscan/calib/calib.hpp>
#include <plantscan/core/error.hpp>
#include <plantscan/core/types.hpp>
#include <plantscan/lightfield/camera.hpp>
#include <plantscan/lightfield/render.hpp>
#include <plantscan/planner/kinematics.hpp>
#include <plantscan/pointcloud/kdtree.hpp>
#include <plantscan/pointcloud/point_cloud.hpp>

#include <Eigen/SVD>

#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace plantscan {

/// Pose from a homogeneous matrix; the bottom row must be (0, 0, 0, 1) and the
/// rotation block rigid.
inline Pose pose_from_matrix(const Mat4& m, double tol = 1e-4) {
  require((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() <= 1e-12, Errc::InvalidTransform,
          "homogeneous matrix must end in (0, 0, 0, 1)");
  Pose p{m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  validate_rigid(p, tol);
  return p;
}

/// Nearest proper rotation to the rotation block, translation unchanged.
inline Pose orthonormalized(const Pose& p) {
  Eigen::JacobiSVD<Mat3> svd(p.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1;
  return {svd.matrixU() * d * svd.matrixV().transpose(), p.translation};
}

/// Camera-frame cloud to the base frame through base_from_tcp and
/// tcp_from_camera. Rotation blocks that are rigid only to printed precision
/// are snapped to the nearest rotation; normals are rotated only.
inline PointCloud chain_transform(const Pose& base_tcp, const Pose& tcp_cam, const PointCloud& cam) {
  validate_rigid(base_tcp);
  validate_rigid(tcp_cam);
  return transformed(cam, orthonormalized(base_tcp) * orthonormalized(tcp_cam));
}

inline PointCloud chain_transform(const Mat4& base_tcp, const Mat4& tcp_cam, const PointCloud& cam) {
  return chain_transform(pose_from_matrix(base_tcp), pose_from_matrix(tcp_cam), cam);
}

/// Least-squares rotation and translation taking `src` onto `dst`.
inline Pose kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  require(src.size() == dst.size() && src.size() >= 3, Errc::InsufficientPoints, "rigid fit needs three pairs");
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= static_cast<double>(src.size());
  cd /= static_cast<double>(dst.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1;
  const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
  return {r, cd - r * cs};
}

struct IcpParams {
  int max_iter = 50;
  double tol = 1e-10;            // stop when the objective improves by less than this
  double max_corr_dist = 0.02;   // m
};

struct IcpResult {
  Pose transform;                // maps source into the target frame
  double rms = 0;                // over accepted correspondences at `transform`
  std::size_t correspondences = 0;
  std::vector<double> history;   // truncated RMS per accepted iterate, non-increasing
  int iterations = 0;
};

namespace detail {

struct Matching {
  std::vector<Vec3> src, dst;
  double sq_sum = 0;        // over accepted pairs
  double truncated = 0;     // mean of min(d², gate²) over all source points
};

inline Matching match(const std::vector<Vec3>& source, const Pose& t, const KdTree& tree,
                      const std::vector<Vec3>& target, double gate) {
  Matching m;
  const double g2 = gate * gate;
  for (const auto& p : source) {
    const Vec3 q = t.apply(p);
    const auto nb = tree.nearest(q);
    const double d2 = nb.dist2;
    if (d2 <= g2) {
      m.src.push_back(p);
      m.dst.push_back(target[nb.index]);
      m.sq_sum += d2;
      m.truncated += d2;
    } else {
      m.truncated += g2;
    }
  }
  m.truncated /= static_cast<double>(source.size());
  return m;
}

}  // namespace detail

/// Point-to-point ICP with nearest-neighbour correspondences inside a distance
/// gate. Each iterate lowers the truncated squared error; the loop ends when
/// it stops improving.
inline IcpResult icp_refine(const PointCloud& source, const PointCloud& target, const IcpParams& params = {},
                            const Pose& initial = {}) {
  require(source.size() >= 3 && target.size() >= 3, Errc::InsufficientPoints, "ICP needs at least three points");
  require(params.max_corr_dist > 0 && params.max_iter >= 0, Errc::Precondition, "invalid ICP parameters");
  const KdTree tree(target.points);
  IcpResult r;
  r.transform = initial;
  auto m = detail::match(source.points, r.transform, tree, target.points, params.max_corr_dist);
  if (m.src.size() < 3) fail(Errc::NoOverlap, "no correspondences within " + std::to_string(params.max_corr_dist) + " m");
  r.history.push_back(std::sqrt(m.truncated));
  for (int it = 0; it < params.max_iter; ++it) {
    // Pairs hold raw source points, so the fit is the whole transform.
    const Pose composed = kabsch(m.src, m.dst);
    auto nm = detail::match(source.points, composed, tree, target.points, params.max_corr_dist);
    if (nm.src.size() < 3 || nm.truncated > m.truncated) break;
    const double gain = m.truncated - nm.truncated;
    r.transform = composed;
    m = std::move(nm);
    r.history.push_back(std::sqrt(m.truncated));
    r.iterations = it + 1;
    if (gain < params.tol) break;
  }
  r.correspondences = m.src.size();
  r.rms = std::sqrt(m.sq_sum / static_cast<double>(m.src.size()));
  return r;
}

/// Single-view multispectral cloud in the depth camera's frame. Points the
/// MS camera cannot see carry no spectrum.
struct Frame3dmpc {
  int viewpoint_id = 0;
  PointCloud cloud;                       // points, normals, bands
  std::vector<std::int64_t> point_index;  // plant point behind each sample, -1 if none

  std::size_t with_spectra() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) n += cloud.has_spectrum(i) ? 1 : 0;
    return n;
  }
};

struct AlignParams {
  double depth_tolerance = 0.01;  // m, MS depth vs reprojected depth
  double min_valid_weight = 0.5;  // bilinear weight carried by valid MS pixels
};

/// Back-projects the depth image, moves each point into the MS camera and
/// samples its reflectance bilinearly over valid MS pixels.
inline Frame3dmpc ms_depth_align(const DnFrame& depth_frame, const ReflectanceFrame& ms, const Pose& ms_from_rgbd,
                                 const AlignParams& params = {}) {
  require(depth_frame.has_depth(), Errc::MissingChannel, "frame has no depth");
  validate_rigid(ms_from_rgbd);
  const auto& kd = depth_frame.camera;
  const auto& km = ms.camera;
  const bool ms_depth = !ms.depth.empty();
  Frame3dmpc out;
  out.viewpoint_id = depth_frame.viewpoint.id;
  const Mat3 to_cam = depth_frame.viewpoint.frame.transpose();
  for (std::size_t k = 0; k < depth_frame.size(); ++k) {
    if (!depth_frame.foreground(k) || !std::isfinite(depth_frame.depth[k])) continue;
    const int u = static_cast<int>(k % kd.width), v = static_cast<int>(k / kd.width);
    const Vec3 p = depth_frame.depth[k] * kd.ray(u, v);
    out.cloud.points.push_back(p);
    out.cloud.normals.push_back(depth_frame.has_normals() ? Vec3(to_cam * depth_frame.normals[k]) : Vec3::UnitZ());
    out.point_index.push_back(depth_frame.point_index.empty() ? -1 : depth_frame.point_index[k]);

    Spectrum s = no_spectrum();
    const Vec3 q = ms_from_rgbd.apply(p);
    if (q.z() > 1e-9) {
      double x = km.fx * q.x() / q.z() + km.cx, y = km.fy * q.y() / q.z() + km.cy;
      if (std::abs(x - std::round(x)) < 1e-9) x = std::round(x);
      if (std::abs(y - std::round(y)) < 1e-9) y = std::round(y);
      if (x >= -0.5 && y >= -0.5 && x <= km.width - 0.5 && y <= km.height - 0.5) {
        const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
        const double fx = x - x0, fy = y - y0;
        Spectrum acc = Spectrum::Zero();
        double wsum = 0;
        for (int dy = 0; dy <= 1; ++dy)
          for (int dx = 0; dx <= 1; ++dx) {
            const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
            const int px = x0 + dx, py = y0 + dy;
            if (w <= 0 || px < 0 || py < 0 || px >= km.width || py >= km.height) continue;
            const auto idx = km.index(px, py);
            if (!ms.valid[idx]) continue;
            if (ms_depth && std::abs(ms.depth[idx] - q.z()) > params.depth_tolerance) continue;
            acc += w * ms.reflectance[idx];
            wsum += w;
          }
        if (wsum >= params.min_valid_weight) s = acc / wsum;
      }
    }
    out.cloud.bands.push_back(s);
  }
  return out;
}

struct FuseParams {
  double voxel = 0.002;  // m
  bool icp = false;
  IcpParams icp_params;
};

struct FrameFusionReport {
  int viewpoint_id = 0;
  std::size_t points = 0, with_spectra = 0;
  bool refined = false;
  double icp_rms = std::numeric_limits<double>::quiet_NaN();
  std::string warning;
};

struct ViewSpectrum {
  int viewpoint_id = 0;
  Spectrum reflectance = Spectrum::Zero();
};

struct FusionResult {
  PointCloud cloud;                              // one point per occupied voxel
  std::vector<std::vector<ViewSpectrum>> views;  // per output point: per-view mean spectra
  std::vector<Pose> poses;                       // final pose used per frame
  std::vector<FrameFusionReport> frames;
};

/// Moves every frame to the base frame, optionally refines each against the
/// cloud accumulated so far, and merges all points voxel by voxel.
inline FusionResult fuse_frames(const std::vector<Frame3dmpc>& frames, const std::vector<Pose>& poses,
                                const FuseParams& params = {}) {
  require(frames.size() == poses.size(), Errc::Precondition, "one pose per frame required");
  require(params.voxel > 0, Errc::Precondition, "voxel size must be positive");
  FusionResult r;
  PointCloud accumulated;
  std::vector<PointCloud> placed;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    validate_rigid(poses[f]);
    FrameFusionReport rep;
    rep.viewpoint_id = frames[f].viewpoint_id;
    rep.points = frames[f].cloud.size();
    rep.with_spectra = frames[f].with_spectra();
    Pose pose = poses[f];
    PointCloud world = transformed(frames[f].cloud, pose);
    if (params.icp && !accumulated.empty() && !world.empty()) {
      try {
        const auto icp = icp_refine(world, accumulated, params.icp_params);
        pose = icp.transform * pose;
        world = transformed(frames[f].cloud, pose);
        rep.refined = true;
        rep.icp_rms = icp.rms;
      } catch (const Error& e) {
        if (e.code() != Errc::NoOverlap && e.code() != Errc::InsufficientPoints) throw;
        rep.warning = e.what();
      }
    }
    accumulated.points.insert(accumulated.points.end(), world.points.begin(), world.points.end());
    placed.push_back(std::move(world));
    r.poses.push_back(pose);
    r.frames.push_back(rep);
  }

  struct Acc {
    Vec3 p = Vec3::Zero(), n = Vec3::Zero();
    Spectrum s = Spectrum::Zero();
    std::size_t count = 0, spectral = 0;
    std::map<int, std::pair<Spectrum, std::size_t>> per_view;
  };
  std::map<VoxelKey, Acc> voxels;
  for (std::size_t f = 0; f < placed.size(); ++f) {
    const auto& c = placed[f];
    for (std::size_t i = 0; i < c.size(); ++i) {
      auto& a = voxels[voxel_key(c.points[i], params.voxel)];
      a.p += c.points[i];
      if (c.has_normals()) a.n += c.normals[i];
      ++a.count;
      if (c.has_spectrum(i)) {
        a.s += c.bands[i];
        ++a.spectral;
        auto& v = a.per_view.try_emplace(frames[f].viewpoint_id, Spectrum::Zero(), 0).first->second;
        v.first += c.bands[i];
        ++v.second;
      }
    }
  }
  for (const auto& [key, a] : voxels) {
    r.cloud.points.push_back(a.p / static_cast<double>(a.count));
    const double len = a.n.norm();
    r.cloud.normals.push_back(len > 1e-12 ? Vec3(a.n / len) : Vec3::UnitZ());
    r.cloud.bands.push_back(a.spectral ? Spectrum(a.s / static_cast<double>(a.spectral)) : no_spectrum());
    std::vector<ViewSpectrum> views;
    for (const auto& [id, v] : a.per_view) views.push_back({id, v.first / static_cast<double>(v.second)});
    r.views.push_back(std::move(views));
  }
  return r;
}

inline void write_fusion_report_csv(std::ostream& os, const FusionResult& r) {
  os << "viewpoint_id,points,with_spectra,refined,icp_rms,warning\n" << std::setprecision(17);
  for (const auto& f : r.frames) {
    os << f.viewpoint_id << ',' << f.points << ',' << f.with_spectra << ',' << (f.refined ? 1 : 0) << ',';
    if (!std::isnan(f.icp_rms)) os << f.icp_rms;
    os << ",\"" << f.warning << "\"\n";
  }
}

}  // namespace plantscan
