#include <plantscan/pipeline/stages.hpp>

#include <gtest/gtest.h>

#include "support/scenes.hpp"

#include <set>
#include <sstream>

using namespace plantscan;

namespace {

template <class F>
std::string expect_error(Errc code, F&& f) {
  try {
    f();
    ADD_FAILURE() << "expected error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
    return e.what();
  }
  return {};
}

RunConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is, "test.cfg");
}

const char* kSmall = R"(
[run]
seed = 11
plants = 1
[scene]
leaf_count = 1
[robot]
enabled = false
[reference]
grid = 15
samples_per_frame = 10
[neref]
hidden_layers = 2
width = 16
epochs = 2
[metrics]
rois_per_plant = 4
plsr_repetitions = 2
plsr_max_components = 2
)";

class PipelineDir : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("plantscan_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  RunConfig config(const std::string& sub, const std::string& text = kSmall) const {
    RunConfig c = parse(text);
    c.out = root_ / sub;
    validate_config(c);
    return c;
  }

  static std::map<std::string, std::string> tree_hashes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() != "manifest.json")
        out[fs::relative(e.path(), dir).string()] = sha256_file(e.path());
    return out;
  }

  fs::path root_;
};

}  // namespace

// ------------------------------------------------------------------ config

TEST(Config, ParsesSectionsCommentsAndVectors) {
  const RunConfig c = parse(
      "# comment\n[run]\nseed = 5\n\n[scene]\nleaf_count = 4   # trailing\n"
      "[camera]\nms_offset = 0.01 -0.02 0.03\n[robot]\nenabled = off\n");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.plant.leaf_count, 4);
  EXPECT_FALSE(c.robot);
  EXPECT_DOUBLE_EQ(c.ms_offset.y(), -0.02);
  EXPECT_NO_THROW(validate_config(c));
}

TEST(Config, UnknownKeyNamesLineAndKey) {
  const auto msg = expect_error(Errc::ConfigError, [] { parse("[run]\nseed = 1\n[scene]\nleafs = 3\n"); });
  EXPECT_NE(msg.find("test.cfg:4"), std::string::npos) << msg;
  EXPECT_NE(msg.find("scene.leafs"), std::string::npos) << msg;
}

TEST(Config, RejectsMalformedDuplicateAndBadValues) {
  expect_error(Errc::ConfigError, [] { parse("[run]\nseed\n"); });
  expect_error(Errc::ConfigError, [] { parse("[run\nseed = 1\n"); });
  expect_error(Errc::ConfigError, [] { parse("seed = 1\n"); });
  expect_error(Errc::ConfigError, [] { parse("[run]\nseed = 1\nseed = 2\n"); });
  const auto msg = expect_error(Errc::ConfigError, [] { parse("[run]\nseed = 1\n[render]\nnoise = lots\n"); });
  EXPECT_NE(msg.find("test.cfg:4"), std::string::npos) << msg;
  expect_error(Errc::ConfigError, [] { parse("[camera]\nms_offset = 1 2\n"); });
  expect_error(Errc::ConfigError, [] { parse("[robot]\nenabled = maybe\n"); });
}

TEST(Config, RequiredAndRangeChecks) {
  const auto missing = expect_error(Errc::ConfigError, [] { validate_config(parse("[run]\nseed = 1\n")); });
  EXPECT_NE(missing.find("scene.leaf_count"), std::string::npos);
  expect_error(Errc::ConfigError, [] { validate_config(parse("[scene]\nleaf_count = 2\n")); });
  const auto empty =
      expect_error(Errc::ConfigError, [] { validate_config(parse("[run]\nseed = 1\n[scene]\nleaf_count = 0\n")); });
  EXPECT_NE(empty.find("empty"), std::string::npos);
  expect_error(Errc::ConfigError, [] { validate_config(parse("[run]\nseed = 1\nplants = 0\n[scene]\nleaf_count = 2\n")); });
  expect_error(Errc::ConfigError,
               [] { validate_config(parse("[run]\nseed = 1\n[scene]\nleaf_count = 2\n[fusion]\nvoxel = -1\n")); });
}

TEST(Config, CanonicalFormRoundTripsAndOmitsOutput) {
  RunConfig c = parse(kSmall);
  c.out = "/somewhere";
  const std::vector<std::string> all = {"run",   "scene", "light",     "camera", "render",  "nbv",
                                        "robot", "reference", "neref", "calib",  "fusion", "metrics"};
  const std::string text = canonical_config(c, all);
  EXPECT_EQ(text.find("run.out"), std::string::npos);
  std::string ini, section;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    const auto dot = line.find('.');
    const std::string s = line.substr(0, dot);
    if (s != section) ini += "[" + (section = s) + "]\n";
    ini += line.substr(dot + 1) + '\n';
  }
  EXPECT_EQ(canonical_config(parse(ini), all), text);
}

// --------------------------------------------------------------- artifacts

TEST(Artifacts, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Artifacts, FrameRoundTripIsLossless) {
  PlantSpec spec;
  spec.leaf_count = 1;
  const SceneModel s = synth_plant(spec, 3);
  const auto fvps = estimate_fvps(compute_aabb(s.plant), 0.5, true);
  RenderOptions ro;
  ro.seed = 9;
  const DnFrame f = render_frame(s, fvps.front(), default_light(), ms_camera(24), ro);
  const std::string bytes = encode_frame(f);
  const DnFrame g = decode_frame(bytes);
  EXPECT_EQ(encode_frame(g), bytes);
  EXPECT_EQ(g.viewpoint.id, f.viewpoint.id);
  EXPECT_TRUE(g.viewpoint.frame.isApprox(f.viewpoint.frame, 0));
  ASSERT_EQ(g.dn.size(), f.dn.size());
  for (std::size_t i = 0; i < f.dn.size(); ++i) ASSERT_EQ(g.dn[i], f.dn[i]);

  expect_error(Errc::IoError, [&] { decode_frame(bytes.substr(0, bytes.size() - 3)); });
  expect_error(Errc::IoError, [&] { decode_frame(bytes + "x"); });
  expect_error(Errc::IoError, [&] { decode_frame("PSREFLFRAME1\n" + bytes); });

  const ReflectanceFrame r = fr_calibrate(subtract_dark(f, DarkCurrent::from(ro.dark)), Spectrum::Constant(500));
  const std::string rb = encode_reflectance(r);
  EXPECT_EQ(encode_reflectance(decode_reflectance(rb)), rb);
  expect_error(Errc::IoError, [&] { decode_reflectance(bytes); });
}

// ------------------------------------------------------------------ stages

TEST_F(PipelineDir, MissingUpstreamNamesTheFile) {
  const RunConfig c = config("a");
  const auto msg = expect_error(Errc::StageDependencyError, [&] { run_stage(c, "plan"); });
  EXPECT_NE(msg.find((c.out / "synth" / "spad.csv").string()), std::string::npos) << msg;
  run_stage(c, "synth");
  fs::remove(c.out / "synth" / "plant_0_scene.ply");
  const auto gone = expect_error(Errc::StageDependencyError, [&] { run_stage(c, "plan"); });
  EXPECT_NE(gone.find("plant_0_scene.ply"), std::string::npos) << gone;
}

TEST_F(PipelineDir, SynthIsByteIdenticalAndIdempotent) {
  const RunConfig a = config("a"), b = config("b");
  const StageResult first = run_stage(a, "synth");
  EXPECT_FALSE(first.skipped);
  EXPECT_EQ(first.files, 3u);
  for (const char* f : {"plant_0_scene.ply", "plant_0_truth.ply", "spad.csv"}) EXPECT_TRUE(fs::exists(a.out / "synth" / f));
  run_stage(b, "synth");
  EXPECT_EQ(tree_hashes(a.out), tree_hashes(b.out));

  const auto before = fs::last_write_time(a.out / "synth" / "spad.csv");
  EXPECT_TRUE(run_stage(a, "synth").skipped);
  EXPECT_EQ(fs::last_write_time(a.out / "synth" / "spad.csv"), before);
  EXPECT_FALSE(run_stage(a, "synth", true).skipped);
  EXPECT_EQ(tree_hashes(a.out), tree_hashes(b.out));

  write_file(a.out / "synth" / "spad.csv", "tampered\n");
  EXPECT_FALSE(run_stage(a, "synth").skipped);
  EXPECT_EQ(tree_hashes(a.out), tree_hashes(b.out));

  RunConfig changed = a;
  changed.plant.leaf_length *= 1.1;
  EXPECT_FALSE(run_stage(changed, "synth").skipped);
  EXPECT_NE(tree_hashes(a.out), tree_hashes(b.out));
  // a config section the stage does not read leaves it up to date
  changed.fuse.voxel *= 2;
  EXPECT_TRUE(run_stage(changed, "synth").skipped);
}

TEST_F(PipelineDir, UpstreamChangeInvalidatesDownstream) {
  RunConfig c = config("a");
  run_stage(c, "synth");
  run_stage(c, "plan");
  EXPECT_TRUE(run_stage(c, "plan").skipped);
  c.plant.leaf_length *= 1.2;
  run_stage(c, "synth");
  EXPECT_FALSE(run_stage(c, "plan").skipped);
}

TEST_F(PipelineDir, SingleLeafPlanHasEveryViewKind) {
  const RunConfig c = config("a");
  run_stage(c, "synth");
  run_stage(c, "plan");
  const auto vps = read_viewpoints_file(c.out / "plan" / "plant_0_viewpoints.csv");
  std::map<ViewKind, int> kinds;
  for (const auto& v : vps) ++kinds[v.kind];
  EXPECT_GE(kinds[ViewKind::FVP], 5);
  EXPECT_EQ(kinds[ViewKind::VVP], 1);
  EXPECT_EQ(kinds[ViewKind::AVP], 1);
  std::set<int> ids;
  for (const auto& v : vps) ids.insert(v.id);
  EXPECT_EQ(ids.size(), vps.size());
}

TEST_F(PipelineDir, CaptureWritesFramesAndReferenceGrid) {
  const RunConfig c = config("a");
  for (const char* s : {"synth", "plan", "capture"}) run_stage(c, s);
  const auto stops = read_viewpoints_file(c.out / "plan" / "plant_0_stops.csv");
  const auto listed = read_csv(c.out / "capture" / "frames.csv");
  EXPECT_EQ(listed.size(), stops.size());
  std::size_t plant_pixels = 0;
  for (const auto& stop : captured_stops(c.out, 0)) {
    const DnFrame ms = load_frame(c.out / "capture" / (frame_stem(0, stop.position) + "_ms.frame"));
    const DnFrame depth = load_frame(c.out / "capture" / (frame_stem(0, stop.position) + "_depth.frame"));
    EXPECT_EQ(ms.viewpoint.id, stop.viewpoint_id);
    EXPECT_EQ(ms.camera.width, c.ms_pixels);
    EXPECT_EQ(depth.camera.width, c.rgbd_width);
    plant_pixels += ms.count(PixelLabel::Plant);
  }
  EXPECT_GT(plant_pixels, 0u);
  EXPECT_EQ(read_viewpoints_file(c.out / "capture" / "reference_frames.csv").size(), 145u);
  const ReferenceDataset d = load_reference_dataset(c.out / "capture" / "reference.ply");
  EXPECT_GT(d.size(), 0u);
  EXPECT_LE(d.size(), 145u * 10);
}

TEST_F(PipelineDir, FullRunIsReproducible) {
  const RunConfig a = config("a"), b = config("b");
  for (const auto& s : stage_order()) {
    run_stage(a, s);
    run_stage(b, s);
  }
  EXPECT_EQ(tree_hashes(a.out), tree_hashes(b.out));
  const std::string report = read_file(a.out / "report" / "report.txt");
  EXPECT_NE(report.find("coverage"), std::string::npos);
  EXPECT_NE(report.find("FVP+VVP+AVP"), std::string::npos);
  const auto ev = read_csv(a.out / "evaluate" / "evaluation.csv");
  bool found = false;
  for (const auto& row : ev)
    if (row.at("metric") == "clipped_coverage" && row.at("subset") == "FVP+VVP+AVP") {
      found = true;
      EXPECT_GT(std::stod(row.at("value")), 0.5);
      EXPECT_LE(std::stod(row.at("value")), 1.0);
    }
  EXPECT_TRUE(found);
  for (const auto& s : stage_order()) EXPECT_TRUE(run_stage(a, s).skipped) << s;
}

TEST_F(PipelineDir, RobotPlanStopsAreReachedPoses) {
  RunConfig c = config("a");
  c.robot = true;
  c.acquisition.hpso.iterations = 60;
  c.acquisition.hpso.swarm = 12;
  run_stage(c, "synth");
  run_stage(c, "plan");
  const auto stops = read_viewpoints_file(c.out / "plan" / "plant_0_stops.csv");
  const auto q = read_tour_configs(c.out / "plan" / "plant_0_tour.csv");
  ASSERT_EQ(stops.size(), q.size());
  ASSERT_FALSE(stops.empty());
  const KinematicChain chain = arm_for(c);
  for (std::size_t i = 0; i < stops.size(); ++i) {
    const Pose cam = forward_kinematics(chain, q[i]) * c.acquisition.hand_eye;
    EXPECT_LT((cam.translation - stops[i].position).norm(), 1e-9);
  }
}

TEST(Plan, OccludedLeafAvpLeavesTheBlockedVvp) {
  PlantSpec spec;
  spec.leaf_count = 2;
  spec.occlusion = 1.0;
  spec.inclination_min_deg = spec.inclination_max_deg = 0;
  const SceneModel s = synth_plant(spec, 4);
  const auto segments = region_growing_segment(s.plant, RegionGrowingParams{});
  ASSERT_EQ(segments.size(), 2u);
  const auto lower = [&] {
    const auto z = [&](std::size_t i) { return centroid(subset(s.plant, segments[i]).points).z(); };
    return z(0) < z(1) ? 0u : 1u;
  }();
  const PointCloud part = subset(s.plant, segments[lower]);
  const Vec3 origin = centroid(part.points);
  std::vector<Vec3> others;
  for (std::size_t i = 0; i < s.plant.size(); ++i)
    if (std::find(segments[lower].begin(), segments[lower].end(), i) == segments[lower].end())
      others.push_back(s.plant.points[i]);

  const NbvParams p;
  const std::vector<PointCloud> parts{part};
  const Viewpoint vvp = estimate_vvps(parts, p.sight_distance, p.sensor_up).at(0);
  const Viewpoint avp = estimate_avp(s.plant, segments[lower], hull_or_obb_faces(s.plant), p);
  const Vec3 to_vvp = -vvp.view_direction(), to_avp = -avp.view_direction();
  EXPECT_FALSE(plantscan::testing::ray_clear(origin, to_vvp, others, spec.spacing));
  EXPECT_TRUE(plantscan::testing::ray_clear(origin, to_avp, others, spec.spacing));
  EXPECT_GT(rad2deg(angle_between(to_vvp, to_avp)), 15.0);
}
