#include <plantscan/calib/calib.hpp>

#include <gtest/gtest.h>

#include "support/render_scenes.hpp"

#include <cmath>
#include <sstream>

using namespace plantscan;
using namespace plantscan::testing;

namespace {

// Small hand-made frame: every pixel is plant, seen head-on at unit depth.
DnFrame flat_frame(double dn) {
  DnFrame f;
  f.camera = CameraIntrinsics::from_fov(3, 3, 10, 10);
  f.viewpoint = looking_down(Vec3::Zero(), 1.0);
  const std::size_t n = f.camera.pixel_count();
  f.dn.assign(n, Spectrum::Constant(dn));
  f.depth.assign(n, 1.0);
  f.normals.assign(n, Vec3::UnitZ());
  f.mask.assign(n, PixelLabel::Plant);
  f.point_index.assign(n, 0);
  return f;
}

ReferencePredictor constant_reference(double dn) {
  return [dn](const std::vector<LightFieldFeature>& f) { return std::vector<Spectrum>(f.size(), Spectrum::Constant(dn)); };
}

// Perfect reference field: the closed-form shading law for the reference material.
ReferencePredictor oracle_reference(const Material& ref, const LightField& light) {
  return [ref, light](const std::vector<LightFieldFeature>& f) {
    std::vector<Spectrum> out;
    for (const auto& x : f) out.push_back(shade_spectrum(x, ref, light));
    return out;
  };
}

Vec3 tilted(double deg, double az = 0) {
  const double t = deg2rad(deg);
  return Vec3(std::sin(t) * std::cos(az), std::sin(t) * std::sin(az), std::cos(t));
}

LightField parallel_only() {
  LightField l = default_light();
  l.diffuse.setZero();
  return l;
}

Spectrum mean_valid(const ReflectanceFrame& r) {
  Spectrum s = Spectrum::Zero();
  std::size_t n = 0;
  for (std::size_t k = 0; k < r.size(); ++k)
    if (r.valid[k]) {
      s += r.reflectance[k];
      ++n;
    }
  return s / static_cast<double>(n);
}

}  // namespace

TEST(SubtractDark, Examples) {
  DnFrame f = flat_frame(110);
  f.dn[1].setConstant(5);
  const DnFrame out = subtract_dark(f, DarkCurrent::from(Spectrum::Constant(10)));
  EXPECT_EQ(out.dn[0], Spectrum::Constant(100));
  EXPECT_EQ(out.dn[1], Spectrum::Zero());
  const DnFrame same = subtract_dark(f, DarkCurrent{});
  for (std::size_t k = 0; k < f.size(); ++k) EXPECT_EQ(same.dn[k], f.dn[k]);
}

TEST(SubtractDark, BandMismatch) {
  try {
    subtract_dark(flat_frame(1), DarkCurrent{Eigen::VectorXd::Zero(24)});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BandMismatch);
  }
}

TEST(SubtractDark, RemovesRenderedOffset) {
  const SceneModel s = patch_scene({{Vec3::Zero(), Vec3::UnitZ(), 0.04, lambert(0.5)}}, 0.002);
  RenderOptions dark = clean();
  dark.dark = Spectrum::LinSpaced(5, 29);
  const DnFrame a = render_frame(s, looking_down(Vec3::Zero(), 0.5), default_light(), ms_camera(32), dark);
  const DnFrame b = render_frame(s, looking_down(Vec3::Zero(), 0.5), default_light(), ms_camera(32), clean());
  const DnFrame c = subtract_dark(a, DarkCurrent::from(dark.dark));
  for (std::size_t k = 0; k < c.size(); ++k) EXPECT_LT((c.dn[k] - b.dn[k]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(HrCalibrate, RatioAndFloor) {
  const auto r = hr_calibrate(flat_frame(55), constant_reference(110));
  EXPECT_EQ(r.provenance, Provenance::HR);
  EXPECT_EQ(r.valid_count(), r.size());
  for (const auto& s : r.reflectance) EXPECT_EQ(s, Spectrum::Constant(0.5));
  const auto low = hr_calibrate(flat_frame(55), constant_reference(0.5));
  EXPECT_EQ(low.valid_count(), 0u);
  for (const auto& s : low.reflectance) EXPECT_TRUE(s.allFinite());
  // Anomaly ceiling.
  EXPECT_EQ(hr_calibrate(flat_frame(170), constant_reference(110)).valid_count(), 0u);
  EXPECT_EQ(hr_calibrate(flat_frame(160), constant_reference(110)).valid_count(), 9u);
}

TEST(HrCalibrate, UntrainedModel) {
  try {
    hr_calibrate(flat_frame(55), NerefModel{});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ModelNotReady);
  }
}

TEST(HrCalibrate, OnlyPlantPixelsAreCalibrated) {
  DnFrame f = flat_frame(55);
  f.mask[0] = PixelLabel::Background;
  f.mask[1] = PixelLabel::Reference;
  const auto r = hr_calibrate(f, constant_reference(110));
  EXPECT_EQ(r.valid[0], 0);
  EXPECT_EQ(r.valid[1], 0);
  EXPECT_EQ(r.valid_count(), 7u);
}

TEST(HrCalibrate, PerfectReferenceRecoversAlbedoAtAnyTilt) {
  const LightField light = default_light();
  const Material ref = ReferenceSphere{}.material;
  std::vector<Patch> patches;
  const double tilts[] = {0, 20, 40, 60};
  for (int k = 0; k < 4; ++k)
    patches.push_back({Vec3(0.05 * (k - 1.5), 0, 0), tilted(tilts[k], 0.7 * k), 0.03, lambert(0.5)});
  const SceneModel s = patch_scene(patches, 0.002);
  for (const Vec3& dir : {Vec3(0, 0, 1), Vec3(0.3, 0.2, 1), Vec3(-0.4, 0.1, 1)}) {
    const DnFrame f = render_frame(s, looking_at(Vec3::Zero(), dir, 0.5), light, ms_camera(64), clean());
    const auto r = hr_calibrate(f, oracle_reference(ref, light));
    ASSERT_GT(r.valid_count(), 500u);
    for (std::size_t k = 0; k < r.size(); ++k)
      if (r.valid[k]) {
        ASSERT_LT((r.reflectance[k] - Spectrum::Constant(0.5)).cwiseAbs().maxCoeff(), 1e-6);
      }
  }
}

TEST(HrCalibrate, TrainedReferenceFieldRecoversAlbedo) {
  SceneModel scene;
  const LightField light = default_light();
  RenderOptions opt;
  opt.seed = 3;
  const auto data = reference_dataset(scene, light, 15.0, 0.5, ms_camera(64), opt, 100);
  std::vector<FieldSample> pairs;
  for (std::size_t i = 0; i < data.size(); ++i) pairs.push_back({data.features[i], (data.dn[i] - opt.dark).cwiseMax(0.0)});
  TrainOptions to;
  to.max_epochs = 15;
  const auto model = train_neref(split_dataset(pairs, {}, 1), MlpArch{}, to).first;

  std::vector<Patch> patches;
  const double tilts[] = {0, 25, 50};
  for (int k = 0; k < 3; ++k)
    patches.push_back({Vec3(0.05 * (k - 1), 0, 0), tilted(tilts[k], 1.3 * k), 0.03, lambert(0.5)});
  const SceneModel s = patch_scene(patches, 0.002);
  const DnFrame f = render_frame(s, looking_at(Vec3::Zero(), Vec3(0.1, -0.2, 1), 0.5), light, ms_camera(64), opt);
  const auto r = hr_calibrate(subtract_dark(f, DarkCurrent::from(opt.dark)), model);
  ASSERT_GT(r.valid_count(), 500u);
  const double target = 0.5 / scene.reference.material.albedo[0];
  for (int k = 0; k < 3; ++k) {
    std::vector<std::size_t> roi;
    for (std::size_t p = 0; p < r.size(); ++p)
      if (r.point_index[p] >= 0 && s.leaf_of[static_cast<std::size_t>(r.point_index[p])] == k) roi.push_back(p);
    const Spectrum m = roi_spectrum(r, roi);
    EXPECT_LT((m / target - Spectrum::Ones()).cwiseAbs().maxCoeff(), 0.05) << "tilt " << tilts[k];
  }
}

TEST(HrCalibrate, InvariantToLightScaling) {
  const Material ref = ReferenceSphere{}.material;
  const SceneModel s = patch_scene({{Vec3::Zero(), tilted(30, 1.0), 0.04, lambert(0.4)}}, 0.002);
  LightField a = default_light(), b = a;
  const Spectrum scale = Spectrum::LinSpaced(0.5, 3.0);
  b.parallel = b.parallel.cwiseProduct(scale);
  b.diffuse = b.diffuse.cwiseProduct(scale);
  const Viewpoint vp = looking_at(Vec3::Zero(), Vec3(0.2, 0, 1), 0.5);
  const auto ra = hr_calibrate(render_frame(s, vp, a, ms_camera(48), clean()), oracle_reference(ref, a));
  const auto rb = hr_calibrate(render_frame(s, vp, b, ms_camera(48), clean()), oracle_reference(ref, b));
  ASSERT_GT(ra.valid_count(), 100u);
  for (std::size_t k = 0; k < ra.size(); ++k) {
    ASSERT_EQ(ra.valid[k], rb.valid[k]);
    if (ra.valid[k]) {
      EXPECT_LT((ra.reflectance[k] - rb.reflectance[k]).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Calibrate, BandLocality) {
  DnFrame f = flat_frame(60);
  DnFrame g = f;
  for (auto& s : g.dn) s[3] = 80;
  const auto check = [](const ReflectanceFrame& a, const ReflectanceFrame& b) {
    for (std::size_t k = 0; k < a.size(); ++k)
      for (std::size_t band = 0; band < kBandCount; ++band)
        if (band == 3) {
          EXPECT_NE(a.reflectance[k][band], b.reflectance[k][band]);
        } else {
          EXPECT_EQ(a.reflectance[k][band], b.reflectance[k][band]);
        }
  };
  check(hr_calibrate(f, constant_reference(110)), hr_calibrate(g, constant_reference(110)));
  check(fr_calibrate(f, Spectrum::Constant(110)), fr_calibrate(g, Spectrum::Constant(110)));
}

TEST(FrCalibrate, HorizontalLeafMatchesAlbedo) {
  const LightField light = default_light();
  const Material ref = ReferenceSphere{}.material;
  const Spectrum flat = flat_reference_dn(ref, light, ms_camera(32), clean());
  EXPECT_LT((flat - shade_spectrum({Vec3::UnitZ(), Vec3::UnitZ()}, ref, light)).cwiseAbs().maxCoeff(), 1e-9);
  const SceneModel s = patch_scene({{Vec3::Zero(), Vec3::UnitZ(), 0.04, lambert(0.5)}}, 0.002);
  const auto r = fr_calibrate(render_frame(s, looking_down(Vec3::Zero(), 0.5), light, ms_camera(32), clean()), flat);
  EXPECT_EQ(r.provenance, Provenance::FR);
  ASSERT_GT(r.valid_count(), 50u);
  EXPECT_LT((mean_valid(r) - Spectrum::Constant(0.5)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FrCalibrate, TiltScalesByCosineUnderParallelLight) {
  const LightField light = parallel_only();
  const Material ref = ReferenceSphere{}.material;
  const Spectrum flat = flat_reference_dn(ref, light, ms_camera(32), clean());
  for (double deg : {0.0, 30.0, 60.0}) {
    const SceneModel s = patch_scene({{Vec3::Zero(), tilted(deg), 0.04, lambert(0.5)}}, 0.002);
    const auto r = fr_calibrate(render_frame(s, looking_down(Vec3::Zero(), 0.5), light, ms_camera(32), clean()), flat);
    ASSERT_GT(r.valid_count(), 20u);
    for (std::size_t k = 0; k < r.size(); ++k)
      if (r.valid[k]) {
        ASSERT_LT((r.reflectance[k] - Spectrum::Constant(0.5 * std::cos(deg2rad(deg)))).cwiseAbs().maxCoeff(), 1e-6);
      }
  }
}

TEST(FrCalibrate, TiltedLeafUnderDefaultLight) {
  const LightField light = default_light();
  const Material ref = ReferenceSphere{}.material;
  const Spectrum flat = flat_reference_dn(ref, light, ms_camera(32), clean());
  const SceneModel s = patch_scene({{Vec3::Zero(), tilted(60), 0.04, lambert(0.5)}}, 0.002);
  const auto r = fr_calibrate(render_frame(s, looking_down(Vec3::Zero(), 0.5), light, ms_camera(32), clean()), flat);
  const Spectrum m = mean_valid(r);
  for (std::size_t b = 0; b < kBandCount; ++b) {
    const double expect = 0.5 * (light.parallel[b] * 0.5 + light.diffuse[b]) / (light.parallel[b] + light.diffuse[b]);
    EXPECT_NEAR(m[b], expect, 1e-9);
    EXPECT_LT(m[b], 0.3);
  }
}

TEST(FrCalibrate, ZeroBandIsInvalid) {
  Spectrum flat = Spectrum::Constant(100);
  flat[7] = 0;
  try {
    fr_calibrate(flat_frame(50), flat);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BandInvalid);
  }
}

TEST(RoiSpectrum, FrameExamples) {
  ReflectanceFrame r = hr_calibrate(flat_frame(55), constant_reference(110));
  EXPECT_EQ(roi_spectrum(r, {0, 4, 8}), Spectrum::Constant(0.5));
  for (std::size_t k = 0; k < 4; ++k) r.reflectance[k].setConstant(k % 2 ? 0.6 : 0.4);
  EXPECT_LT((roi_spectrum(r, {0, 1, 2, 3}) - Spectrum::Constant(0.5)).cwiseAbs().maxCoeff(), 1e-15);
  r.valid[5] = r.valid[6] = 0;
  try {
    roi_spectrum(r, {5, 6});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyRoi);
  }
}

TEST(RoiSpectrum, CloudMatchesBruteForce) {
  Rng rng(5);
  PointCloud c;
  for (int i = 0; i < 400; ++i) {
    c.points.push_back(Vec3(uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05)));
    Spectrum s;
    for (std::size_t b = 0; b < kBandCount; ++b) s[b] = uniform(rng, 0, 1);
    c.bands.push_back(i % 7 == 0 ? no_spectrum() : s);
  }
  const KdTree tree(c.points);
  const Vec3 q(0.01, -0.02, 0.0);
  const Spectrum got = roi_spectrum(c, tree, q, 0.03);
  Spectrum sum = Spectrum::Zero();
  int n = 0;
  for (std::size_t i = 0; i < c.size(); ++i)
    if ((c.points[i] - q).norm() <= 0.03 && i % 7 != 0) {
      sum += c.bands[i];
      ++n;
    }
  ASSERT_GT(n, 5);
  EXPECT_LT((got - sum / n).cwiseAbs().maxCoeff(), 1e-12);
  try {
    roi_spectrum(c, {0, 7, 14});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyRoi);
  }
}

TEST(Export, PlyAndRoiCsv) {
  DnFrame f = flat_frame(55);
  f.mask[2] = PixelLabel::Background;
  const auto r = hr_calibrate(f, constant_reference(110));
  const PlyTable t = reflectance_ply_table(r);
  EXPECT_EQ(t.at("x").size(), 8u);
  EXPECT_EQ(t.at(band_property("refl", 0)).size(), 8u);
  EXPECT_NEAR(t.at(band_property("refl", 24))[0], 0.5, 1e-7);
  EXPECT_NEAR(t.at("z")[0], 0.0, 1e-12);
  std::ostringstream os;
  write_roi_csv(os, {{"plant-0", 1, Provenance::FR, Spectrum::Constant(0.25)}});
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, 30), "plant,roi,calibration,refl_650");
  EXPECT_NE(s.find("\nplant-0,1,FR,0.25,"), std::string::npos);
}
