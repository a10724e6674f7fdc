#include <plantscan/analytics/analytics.hpp>
#include <plantscan/fusion/fusion.hpp>

#include <gtest/gtest.h>

#include "support/render_scenes.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace plantscan;
using namespace plantscan::testing;

namespace {

template <class F>
void expect_error(Errc code, F&& f) {
  try {
    f();
    ADD_FAILURE() << "expected error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code);
  }
}

Pose rot_trans(const Vec3& axis, double deg, const Vec3& t) {
  return {Eigen::AngleAxisd(deg2rad(deg), axis.normalized()).toRotationMatrix(), t};
}

Viewpoint viewpoint_at(const Pose& world_from_cam, int id) {
  Viewpoint vp;
  vp.id = id;
  vp.position = world_from_cam.translation;
  vp.frame = world_from_cam.rotation;
  return vp;
}

PointCloud random_cloud(Rng& rng, int n, const Vec3& lo, const Vec3& hi) {
  PointCloud c;
  for (int i = 0; i < n; ++i)
    c.points.push_back(Vec3(uniform(rng, lo.x(), hi.x()), uniform(rng, lo.y(), hi.y()), uniform(rng, lo.z(), hi.z())));
  return c;
}

ReferencePredictor constant_reference(double dn) {
  return [dn](const std::vector<LightFieldFeature>& f) { return std::vector<Spectrum>(f.size(), Spectrum::Constant(dn)); };
}

// Depth-camera frame of `scene` from `vp`, paired with a co-located MS image.
Frame3dmpc colocated_frame(const SceneModel& scene, const Viewpoint& vp, const CameraIntrinsics& cam) {
  const DnFrame f = render_frame(scene, vp, default_light(), cam, clean());
  return ms_depth_align(f, hr_calibrate(f, constant_reference(300)), Pose{});
}

PlantSpec small_plant() {
  PlantSpec spec;
  spec.leaf_count = 4;
  spec.spacing = 0.003;
  return spec;
}

}  // namespace

TEST(ChainTransform, IdentityAndTranslation) {
  Rng rng(1);
  PointCloud c = random_cloud(rng, 50, Vec3(-1, -1, -1), Vec3(1, 1, 1));
  for (std::size_t i = 0; i < c.size(); ++i) c.normals.push_back(Vec3::UnitZ());
  const PointCloud same = chain_transform(Pose{}, Pose{}, c);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(same.points[i], c.points[i]);
  const PointCloud moved = chain_transform(Pose{Mat3::Identity(), Vec3(1, 0, 0)}, Pose{}, c);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(moved.points[i], c.points[i] + Vec3(1, 0, 0));
    EXPECT_EQ(moved.normals[i], c.normals[i]);
  }
}

TEST(ChainTransform, HandEyeMatrixOnOrigin) {
  PointCloud c;
  c.points.push_back(Vec3::Zero());
  const PointCloud out = chain_transform(Mat4(Mat4::Identity()), default_hand_eye().matrix(), c);
  EXPECT_NEAR(out.points[0].x(), -0.03459, 1e-15);
  EXPECT_NEAR(out.points[0].y(), 0.065924, 1e-15);
  EXPECT_NEAR(out.points[0].z(), 0.12, 1e-15);
}

TEST(ChainTransform, PreservesDistancesAndRotatesNormals) {
  Rng rng(2);
  PointCloud c = random_cloud(rng, 40, Vec3(-0.3, -0.3, 0), Vec3(0.3, 0.3, 0.6));
  for (std::size_t i = 0; i < c.size(); ++i) c.normals.push_back(Vec3(1, 2, 3).normalized());
  const Pose a = rot_trans(Vec3(1, 2, -1), 37, Vec3(0.4, -0.2, 0.9));
  const Pose b = default_hand_eye();
  const PointCloud out = chain_transform(a, b, c);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = i + 1; j < c.size(); ++j)
      EXPECT_NEAR((out.points[i] - out.points[j]).norm(), (c.points[i] - c.points[j]).norm(), 1e-9);
    EXPECT_LT((out.normals[i] - (a.rotation * b.rotation) * c.normals[i]).norm(), 1e-4);
    EXPECT_LT((out.points[i] - a.apply(b.apply(c.points[i]))).norm(), 1e-4);
  }
}

TEST(ChainTransform, RejectsNonRigid) {
  PointCloud c;
  c.points.push_back(Vec3::Ones());
  Mat4 scaled = Mat4::Identity();
  scaled(0, 0) = 1.1;
  expect_error(Errc::InvalidTransform, [&] { chain_transform(scaled, Mat4(Mat4::Identity()), c); });
  Mat4 projective = Mat4::Identity();
  projective(3, 0) = 0.2;
  expect_error(Errc::InvalidTransform, [&] { chain_transform(Mat4(Mat4::Identity()), projective, c); });
  Mat4 mirror = Mat4::Identity();
  mirror(2, 2) = -1;
  expect_error(Errc::InvalidTransform, [&] { pose_from_matrix(mirror); });
}

TEST(Kabsch, RecoversExactMotion) {
  Rng rng(3);
  const PointCloud c = random_cloud(rng, 30, Vec3(-1, -1, -1), Vec3(1, 1, 1));
  const Pose t = rot_trans(Vec3(0.3, -1, 0.5), 123, Vec3(0.1, 2, -3));
  std::vector<Vec3> dst;
  for (const auto& p : c.points) dst.push_back(t.apply(p));
  const Pose got = kabsch(c.points, dst);
  EXPECT_LT((got.rotation - t.rotation).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((got.translation - t.translation).norm(), 1e-12);
  EXPECT_NEAR(got.rotation.determinant(), 1.0, 1e-12);
}

TEST(Icp, SameCloudGivesIdentity) {
  const SceneModel s = synth_plant(small_plant(), 1);
  const auto r = icp_refine(s.plant, s.plant);
  EXPECT_LT((r.transform.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT(r.transform.translation.norm(), 1e-9);
  EXPECT_LT(r.rms, 1e-9);
  EXPECT_EQ(r.correspondences, s.plant.size());
}

TEST(Icp, RecoversKnownMotion) {
  Rng rng(7);
  const PointCloud src = random_cloud(rng, 3000, Vec3::Zero(), Vec3(0.12, 0.08, 0.05));
  const Vec3 c = centroid(src.points);
  // 10 degrees about an axis through the cloud, then 2 cm.
  const Pose about = Pose{Mat3::Identity(), c} * rot_trans(Vec3(0.2, 1, 0.3), 10, Vec3::Zero()) *
                     Pose{Mat3::Identity(), -c};
  const Vec3 shift(0.012, -0.01, 0.0125);
  ASSERT_NEAR(shift.norm(), 0.02, 1e-3);
  const Pose motion = Pose{Mat3::Identity(), shift} * about;
  IcpParams p;
  p.max_corr_dist = 0.05;
  p.max_iter = 200;
  const auto r = icp_refine(src, transformed(src, motion), p);
  double worst = 0;
  for (const auto& q : src.points) worst = std::max(worst, (r.transform.apply(q) - motion.apply(q)).norm());
  EXPECT_LE(worst, 1e-3);
  const double angle = rad2deg(Eigen::AngleAxisd(r.transform.rotation * motion.rotation.transpose()).angle());
  EXPECT_LE(std::abs(angle), 0.1);
}

// Thin leaf sheets slide along themselves, so a plant cloud only gets closer.
TEST(Icp, ReducesPlantMisalignment) {
  const SceneModel s = synth_plant(small_plant(), 2);
  const Vec3 c = centroid(s.plant.points);
  const Pose motion = Pose{Mat3::Identity(), Vec3(0.012, -0.01, 0.0125) + c} *
                      rot_trans(Vec3(0.2, 1, 0.3), 10, Vec3::Zero()) * Pose{Mat3::Identity(), -c};
  IcpParams p;
  p.max_corr_dist = 0.05;
  p.max_iter = 200;
  const auto r = icp_refine(s.plant, transformed(s.plant, motion), p);
  double before = 0, after = 0;
  for (const auto& q : s.plant.points) {
    before = std::max(before, (q - motion.apply(q)).norm());
    after = std::max(after, (r.transform.apply(q) - motion.apply(q)).norm());
  }
  EXPECT_LT(after, 0.5 * before);
  EXPECT_LT(r.history.back(), 0.25 * r.history.front());
}

TEST(Icp, RmsHistoryNeverIncreases) {
  Rng rng(4);
  const SceneModel s = synth_plant(small_plant(), 3);
  for (int t = 0; t < 8; ++t) {
    const Pose m = rot_trans(Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), 1), uniform(rng, -12, 12),
                             Vec3(uniform(rng, -0.02, 0.02), uniform(rng, -0.02, 0.02), uniform(rng, -0.02, 0.02)));
    IcpParams p;
    p.max_corr_dist = uniform(rng, 0.01, 0.04);
    const auto r = icp_refine(s.plant, transformed(s.plant, m), p);
    ASSERT_GE(r.history.size(), 1u);
    for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1]);
  }
}

TEST(Icp, DisjointCloudsHaveNoOverlap) {
  Rng rng(5);
  const PointCloud a = random_cloud(rng, 100, Vec3::Zero(), Vec3(0.1, 0.1, 0.1));
  const PointCloud b = transformed(a, Pose{Mat3::Identity(), Vec3(10, 0, 0)});
  IcpParams p;
  p.max_corr_dist = 0.05;
  expect_error(Errc::NoOverlap, [&] { icp_refine(a, b, p); });
}

TEST(MsDepthAlign, ColocatedCamerasCopyPixelValues) {
  const SceneModel s = patch_scene({{Vec3::Zero(), Vec3(0.2, 0, 1), 0.06, lambert(0.5)}}, 0.002);
  const auto cam = ms_camera(64);
  const DnFrame f = render_frame(s, looking_down(Vec3::Zero(), 0.4), default_light(), cam, clean());
  const auto ms = hr_calibrate(f, constant_reference(300));
  const auto out = ms_depth_align(f, ms, Pose{});
  std::size_t i = 0, plant = 0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (!f.foreground(k)) continue;
    if (ms.valid[k]) {
      ASSERT_TRUE(out.cloud.has_spectrum(i));
      EXPECT_LT((out.cloud.bands[i] - ms.reflectance[k]).cwiseAbs().maxCoeff(), 1e-12);
      ++plant;
    }
    EXPECT_EQ(out.point_index[i], f.point_index[k]);
    EXPECT_LT((f.viewpoint.pose().apply(out.cloud.points[i]) - f.surface_point(k)).norm(), 1e-12);
    ++i;
  }
  EXPECT_EQ(i, out.cloud.size());
  EXPECT_GT(plant, 500u);
}

TEST(MsDepthAlign, NarrowMsViewMatchesReprojectionOracle) {
  // A plane filling the whole depth view.
  const SceneModel s = patch_scene({{Vec3::Zero(), Vec3::UnitZ(), 1.0, lambert(0.5)}}, 0.004);
  const Viewpoint vp = looking_down(Vec3::Zero(), 0.5, 1);
  const auto rgbd = rgbd_camera(160, 128);
  const auto mscam = ms_camera(128);
  const DnFrame depth = render_frame(s, vp, default_light(), rgbd, clean());
  ASSERT_EQ(depth.count(PixelLabel::Plant), depth.size());
  for (const Pose& ms_from_rgbd : {Pose{}, Pose{Mat3::Identity(), Vec3(-0.03, 0, 0)}}) {
    const Viewpoint ms_vp = viewpoint_at(vp.pose() * ms_from_rgbd.inverse(), 1);
    const DnFrame ms_dn = render_frame(s, ms_vp, default_light(), mscam, clean());
    const auto out = ms_depth_align(depth, hr_calibrate(ms_dn, constant_reference(300)), ms_from_rgbd);
    const double t = std::tan(deg2rad(8.0));
    std::size_t oracle = 0, mismatch = 0;
    for (std::size_t i = 0; i < out.cloud.size(); ++i) {
      const Vec3 q = ms_from_rgbd.apply(out.cloud.points[i]);
      const bool inside = q.z() > 0 && std::abs(q.x() / q.z()) <= t && std::abs(q.y() / q.z()) <= t;
      oracle += inside;
      mismatch += inside != out.cloud.has_spectrum(i);
    }
    const double frac = static_cast<double>(out.with_spectra()) / static_cast<double>(out.cloud.size());
    EXPECT_LE(mismatch, oracle / 200) << "mismatch " << mismatch << " of " << oracle;
    const double share = (t * t) / (std::tan(deg2rad(37.5)) * std::tan(deg2rad(32.5)));
    EXPECT_NEAR(frac, share, 0.1 * share);
  }
}

TEST(MsDepthAlign, PointsBehindMsCameraHaveNoSpectrum) {
  const SceneModel s = patch_scene({{Vec3::Zero(), Vec3::UnitZ(), 0.06, lambert(0.5)}}, 0.002);
  const DnFrame f = render_frame(s, looking_down(Vec3::Zero(), 0.4), default_light(), ms_camera(32), clean());
  const auto out = ms_depth_align(f, hr_calibrate(f, constant_reference(300)), rot_trans(Vec3::UnitY(), 180, Vec3::Zero()));
  ASSERT_GT(out.cloud.size(), 0u);
  EXPECT_EQ(out.with_spectra(), 0u);
}

TEST(MsDepthAlign, MissingDepth) {
  DnFrame f;
  f.mask.assign(4, PixelLabel::Plant);
  expect_error(Errc::MissingChannel, [&] { ms_depth_align(f, ReflectanceFrame{}, Pose{}); });
}

TEST(FuseFrames, DisjointHalvesKeepEveryVoxel) {
  Rng rng(6);
  Frame3dmpc a, b;
  a.viewpoint_id = 0;
  b.viewpoint_id = 1;
  a.cloud = random_cloud(rng, 300, Vec3(-0.05, -0.05, 0.4), Vec3(0, 0.05, 0.5));
  b.cloud = random_cloud(rng, 300, Vec3(0, -0.05, 0.4), Vec3(0.05, 0.05, 0.5));
  const Pose pa = rot_trans(Vec3::UnitZ(), 0, Vec3::Zero());
  const Pose pb = rot_trans(Vec3::UnitZ(), 0, Vec3(0.2, 0, 0));
  const auto r = fuse_frames({a, b}, {pa, pb}, {0.005, false, {}});
  std::vector<Vec3> all;
  for (const auto& p : a.cloud.points) all.push_back(pa.apply(p));
  for (const auto& p : b.cloud.points) all.push_back(pb.apply(p));
  const auto va = occupied_voxels(transformed(a.cloud, pa).points, 0.005).size();
  const auto vb = occupied_voxels(transformed(b.cloud, pb).points, 0.005).size();
  EXPECT_EQ(r.cloud.size(), occupied_voxels(all, 0.005).size());
  EXPECT_EQ(r.cloud.size(), va + vb);
}

TEST(FuseFrames, SingleFrameIsVoxelisedFrame) {
  const SceneModel s = synth_plant(small_plant(), 4);
  const Viewpoint vp = looking_at(Vec3(0, 0, 0.12), Vec3(0.3, 0.1, 1), 0.5);
  const Frame3dmpc f = colocated_frame(s, vp, rgbd_camera(160, 128));
  const auto r = fuse_frames({f}, {vp.pose()}, {0.002, true, {}});
  const PointCloud expect = voxel_downsample(transformed(f.cloud, vp.pose()), 0.002);
  ASSERT_EQ(r.cloud.size(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    EXPECT_LT((r.cloud.points[i] - expect.points[i]).norm(), 1e-12);
    EXPECT_EQ(r.cloud.has_spectrum(i), expect.has_spectrum(i));
    if (expect.has_spectrum(i)) {
      EXPECT_LT((r.cloud.bands[i] - expect.bands[i]).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
  EXPECT_FALSE(r.frames[0].refined);
}

TEST(FuseFrames, IcpRemovesPosePerturbation) {
  const SceneModel s = synth_plant(small_plant(), 5);
  const Vec3 target(0, 0, 0.12);
  const Viewpoint v0 = looking_at(target, Vec3(0.3, 0, 1), 0.5, 0);
  const Viewpoint v1 = looking_at(target, Vec3(-0.1, 0.3, 1), 0.5, 1);
  const auto cam = rgbd_camera(160, 128);
  const Frame3dmpc f0 = colocated_frame(s, v0, cam), f1 = colocated_frame(s, v1, cam);
  const Pose bad = Pose{Mat3::Identity(), Vec3(0.006, -0.006, 0.0052)} * v1.pose();
  const auto rms_to_truth = [&](const Pose& used) {
    double sq = 0;
    for (const auto& p : f1.cloud.points) sq += (used.apply(p) - v1.pose().apply(p)).squaredNorm();
    return std::sqrt(sq / static_cast<double>(f1.cloud.size()));
  };
  FuseParams fp;
  fp.voxel = 0.002;
  const auto coarse = fuse_frames({f0, f1}, {v0.pose(), bad}, fp);
  EXPECT_NEAR(rms_to_truth(coarse.poses[1]), 0.01, 1e-3);
  fp.icp = true;
  const auto fine = fuse_frames({f0, f1}, {v0.pose(), bad}, fp);
  EXPECT_TRUE(fine.frames[1].refined);
  EXPECT_LE(rms_to_truth(fine.poses[1]), 0.002);
}

TEST(FuseFrames, CoverageGrowsWithFrames) {
  const SceneModel s = synth_plant(small_plant(), 6);
  const Vec3 target(0, 0, 0.12);
  const auto cam = rgbd_camera(160, 128);
  std::vector<Frame3dmpc> frames;
  std::vector<Pose> poses;
  double last = 0;
  const Vec3 dirs[] = {Vec3(0, 0, 1), Vec3(1, 0, 0.3), Vec3(-1, 0.2, 0.3), Vec3(0, -1, 0.5), Vec3(0.2, 1, 0.1)};
  for (int k = 0; k < 5; ++k) {
    const Viewpoint vp = looking_at(target, dirs[k], 0.5, k);
    frames.push_back(colocated_frame(s, vp, cam));
    poses.push_back(vp.pose());
    const auto r = fuse_frames(frames, poses, {0.002, false, {}});
    const double c = coverage(r.cloud, s.plant, 0.005);
    EXPECT_GE(c, last);
    last = c;
  }
  EXPECT_GT(last, 0.5);
}

TEST(FuseFrames, SpectraSurviveGridAlignedMotion) {
  const SceneModel s = synth_plant(small_plant(), 7);
  const Vec3 target(0, 0, 0.12);
  const auto cam = rgbd_camera(160, 128);
  std::vector<Frame3dmpc> frames;
  std::vector<Pose> poses, moved;
  const Pose motion = rot_trans(Vec3::UnitZ(), 90, Vec3(0.004, -0.01, 0.002));
  for (int k = 0; k < 3; ++k) {
    const Viewpoint vp = looking_at(target, Vec3(std::cos(2.1 * k), std::sin(2.1 * k), 0.8), 0.5, k);
    frames.push_back(colocated_frame(s, vp, cam));
    poses.push_back(vp.pose());
    moved.push_back(motion * vp.pose());
  }
  const auto a = fuse_frames(frames, poses, {0.002, false, {}});
  const auto b = fuse_frames(frames, moved, {0.002, false, {}});
  ASSERT_EQ(a.cloud.size(), b.cloud.size());
  const auto sorted = [](const PointCloud& c) {
    std::vector<double> key;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c.has_spectrum(i)) key.push_back(c.bands[i].sum());
    std::sort(key.begin(), key.end());
    return key;
  };
  const auto ka = sorted(a.cloud), kb = sorted(b.cloud);
  ASSERT_EQ(ka.size(), kb.size());
  std::size_t off = 0;
  for (std::size_t i = 0; i < ka.size(); ++i) off += std::abs(ka[i] - kb[i]) > 1e-9;
  EXPECT_LE(off, ka.size() / 100);
}

TEST(FuseFrames, PerViewSpectraAreKept) {
  Frame3dmpc a, b;
  a.viewpoint_id = 3;
  b.viewpoint_id = 8;
  a.cloud.points = {Vec3(0.0005, 0.0005, 0.0005), Vec3(0.0015, 0.0005, 0.0005)};
  a.cloud.bands = {Spectrum::Constant(0.2), Spectrum::Constant(0.4)};
  b.cloud.points = {Vec3(0.001, 0.001, 0.001)};
  b.cloud.bands = {Spectrum::Constant(0.6)};
  const auto r = fuse_frames({a, b}, {Pose{}, Pose{}}, {0.002, false, {}});
  ASSERT_EQ(r.cloud.size(), 1u);
  EXPECT_LT((r.cloud.bands[0] - Spectrum::Constant(0.4)).cwiseAbs().maxCoeff(), 1e-15);
  ASSERT_EQ(r.views[0].size(), 2u);
  EXPECT_EQ(r.views[0][0].viewpoint_id, 3);
  EXPECT_LT((r.views[0][0].reflectance - Spectrum::Constant(0.3)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(r.views[0][1].viewpoint_id, 8);
  EXPECT_NEAR(ed_range({{r.views[0][0].reflectance, r.views[0][1].reflectance}, {}}), 0.3, 1e-15);
}

TEST(FuseFrames, NoOverlapBecomesWarning) {
  Rng rng(9);
  Frame3dmpc a, b;
  a.cloud = random_cloud(rng, 50, Vec3::Zero(), Vec3(0.05, 0.05, 0.05));
  b.cloud = a.cloud;
  b.viewpoint_id = 1;
  FuseParams fp;
  fp.icp = true;
  const auto r = fuse_frames({a, b}, {Pose{}, Pose{Mat3::Identity(), Vec3(5, 0, 0)}}, fp);
  EXPECT_FALSE(r.frames[1].refined);
  EXPECT_NE(r.frames[1].warning.find("no correspondences"), std::string::npos);
  std::ostringstream os;
  write_fusion_report_csv(os, r);
  EXPECT_EQ(os.str().substr(0, 49), "viewpoint_id,points,with_spectra,refined,icp_rms,");
}
