#pragma once

#include <plantscan/core/log.hpp>
#include <plantscan/pipeline/artifacts.hpp>
#include <plantscan/pipeline/config.hpp>
#include <plantscan/pipeline/workflow.hpp>
#include <plantscan/pointcloud/ply.hpp>

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace plantscan {

namespace fs = std::filesystem;

// ------------------------------------------------------------------ manifest

/// Completion records of every stage run in an output directory.
class Manifest {
 public:
  struct Record {
    std::string inputs;                         // hash of config sections and upstream outputs
    std::map<std::string, std::string> outputs;  // path relative to the output dir -> SHA-256
    double seconds = 0;
    bool deterministic = false;
  };

  static fs::path path_in(const fs::path& out) { return out / "manifest.json"; }

  static Manifest load(const fs::path& out) {
    Manifest m;
    const fs::path p = path_in(out);
    if (!fs::exists(p)) return m;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(p));
      for (const auto& [name, r] : j.at("stages").items()) {
        Record rec;
        rec.inputs = r.at("inputs").get<std::string>();
        rec.outputs = r.at("outputs").get<std::map<std::string, std::string>>();
        rec.seconds = r.value("seconds", 0.0);
        rec.deterministic = r.value("deterministic", false);
        m.stages_[name] = std::move(rec);
      }
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::IoError, "corrupt manifest '" + p.string() + "': " + e.what());
    }
    return m;
  }

  void save(const fs::path& out) const {
    nlohmann::json j;
    j["version"] = 1;
    j["stages"] = nlohmann::json::object();
    for (const auto& [name, r] : stages_)
      j["stages"][name] = {{"inputs", r.inputs}, {"outputs", r.outputs}, {"seconds", r.seconds},
                           {"deterministic", r.deterministic}};
    write_file(path_in(out), j.dump(2) + '\n');
  }

  const Record* find(const std::string& stage) const {
    const auto it = stages_.find(stage);
    return it == stages_.end() ? nullptr : &it->second;
  }
  void set(const std::string& stage, Record r) { stages_[stage] = std::move(r); }

 private:
  std::map<std::string, Record> stages_;
};

/// Writes a stage's files under `<out>/<stage>/` and remembers their hashes.
class ArtifactWriter {
 public:
  ArtifactWriter(fs::path out, std::string stage) : out_(std::move(out)), stage_(std::move(stage)) {}

  void write(const std::string& name, std::string_view bytes) {
    const std::string rel = stage_ + "/" + name;
    write_file(out_ / rel, bytes);
    hashes_[rel] = sha256_hex(bytes);
  }
  template <class F>
  void write_text(const std::string& name, F&& f) {
    std::ostringstream os;
    f(os);
    write(name, os.str());
  }
  void write_ply(const std::string& name, const PlyTable& t) {
    std::ostringstream os;
    plantscan::write_ply(os, t, PlyFormat::BinaryLittleEndian);
    write(name, os.str());
  }
  const std::map<std::string, std::string>& hashes() const { return hashes_; }

 private:
  fs::path out_;
  std::string stage_;
  std::map<std::string, std::string> hashes_;
};

struct StageDef {
  std::string name;
  std::vector<std::string> deps;
  std::vector<std::string> sections;  // config sections that feed the stage
  std::string primary;                // file named when the stage is missing
  std::function<void(const RunConfig&, ArtifactWriter&)> run;
};

struct StageResult {
  bool skipped = false;
  double seconds = 0;
  std::size_t files = 0;
};

// ------------------------------------------------------------------- helpers

inline std::string plant_name(int k) { return "plant_" + std::to_string(k); }

inline SceneModel scene_for(const RunConfig& c, int k) { return synth_plant(c.plant, c.plant_seed(k)); }

inline KinematicChain arm_for(const RunConfig& c) { return default_arm(Pose{Mat3::Identity(), -c.plant_position}); }

inline std::string fmt(double v, int digits = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Rows of a CSV file with a header, as header-name -> cell maps.
inline std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
  std::istringstream is(read_file(p));
  std::string line;
  std::vector<std::string> header;
  std::vector<std::map<std::string, std::string>> rows;
  const auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (char ch : s) {
      if (ch == '"') {
        quoted = !quoted;
      } else if (ch == ',' && !quoted) {
        cells.push_back(cell);
        cell.clear();
      } else {
        cell += ch;
      }
    }
    cells.push_back(cell);
    return cells;
  };
  if (!std::getline(is, line)) fail(Errc::IoError, "'" + p.string() + "' is empty");
  header = split(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    require(cells.size() == header.size(), Errc::IoError, "'" + p.string() + "' has a ragged row");
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<Viewpoint> read_viewpoints_file(const fs::path& p) {
  std::istringstream is(read_file(p));
  return read_viewpoints_csv(is);
}

inline std::vector<JointConfig> read_tour_configs(const fs::path& p) {
  std::vector<JointConfig> out;
  for (const auto& row : read_csv(p)) {
    JointConfig q;
    for (int j = 0; j < 6; ++j) q[j] = std::stod(row.at("q" + std::to_string(j + 1)));
    out.push_back(q);
  }
  return out;
}

inline std::string frame_stem(int plant, std::size_t position) {
  return plant_name(plant) + "_stop_" + std::to_string(position);
}

/// Captured stops of one plant as listed by the capture stage.
struct CapturedStop {
  std::size_t position = 0;
  int viewpoint_id = 0;
  ViewKind kind = ViewKind::FVP;
};

inline std::vector<CapturedStop> captured_stops(const fs::path& out, int plant) {
  std::vector<CapturedStop> stops;
  for (const auto& row : read_csv(out / "capture" / "frames.csv"))
    if (std::stoi(row.at("plant")) == plant && row.at("status") == "ok")
      stops.push_back({static_cast<std::size_t>(std::stoul(row.at("position"))), std::stoi(row.at("viewpoint_id")),
                       parse_view_kind(row.at("kind"))});
  return stops;
}

// -------------------------------------------------------------------- stages

inline void stage_synth(const RunConfig& c, ArtifactWriter& w) {
  std::ostringstream spad;
  spad << "plant,leaf,spad,inclination_deg,points\n" << std::setprecision(17);
  for (int k = 0; k < c.plants; ++k) {
    const SceneModel s = scene_for(c, k);
    PlyTable scene = to_ply_table(s.plant);
    auto& leaf = scene.add("leaf", PlyType::Int32, s.plant.size());
    auto& edge = scene.add("edge_distance", PlyType::Float64, s.plant.size());
    for (std::size_t i = 0; i < s.plant.size(); ++i) {
      leaf[i] = s.leaf_of[i];
      edge[i] = s.edge_distance[i];
    }
    w.write_ply(plant_name(k) + "_scene.ply", scene);
    PointCloud truth;
    truth.points = s.plant.points;
    for (std::size_t i = 0; i < s.plant.size(); ++i)
      truth.bands.push_back(s.material_of(i).albedo.cwiseQuotient(s.reference.material.albedo));
    w.write_ply(plant_name(k) + "_truth.ply", to_ply_table(truth));
    for (const auto& l : s.leaves)
      spad << k << ',' << l.id << ',' << l.spad << ',' << l.inclination_deg << ',' << l.size() << '\n';
  }
  w.write("spad.csv", spad.str());
}

inline void stage_plan(const RunConfig& c, ArtifactWriter& w) {
  std::ostringstream report;
  report << "plant,parts,fvp,vvp,avp,stops,dropped,initial_fitness,final_fitness,travel,timed_out_legs,warnings\n"
         << std::setprecision(17);
  for (int k = 0; k < c.plants; ++k) {
    const SceneModel s = scene_for(c, k);
    const ViewpointSet vs = estimate_viewpoints(s.plant, c.nbv_params(), c.segment_params());
    for (const auto& msg : vs.warnings) log_warn(plant_name(k) + ": " + msg);
    w.write_text(plant_name(k) + "_viewpoints.csv", [&](std::ostream& os) { write_viewpoints_csv(os, vs.viewpoints); });
    std::vector<Viewpoint> stops;
    std::size_t dropped = 0, timed_out = 0;
    double initial = std::numeric_limits<double>::quiet_NaN(), final = initial, travel = 0;
    if (c.robot) {
      const KinematicChain chain = arm_for(c);
      std::vector<Vec3> obstacles = s.plant.points;
      const auto& ref = s.reference;
      for (double x = -ref.radius; x <= ref.radius; x += c.map_resolution / 2)
        for (double y = -ref.radius; y <= ref.radius; y += c.map_resolution / 2)
          for (double z = 0; z <= ref.radius; z += c.map_resolution / 2)
            if (ref.contains(ref.center + Vec3(x, y, z))) obstacles.push_back(ref.center + Vec3(x, y, z));
      const OccupancyGrid grid = build_collision_map(obstacles, c.map_resolution, c.capsule_radius);
      AcquisitionParams ap = c.acquisition;
      ap.ik.seed = substream(c.seed, "ik", static_cast<std::uint64_t>(k))();
      ap.hpso.seed = substream(c.seed, "hpso", static_cast<std::uint64_t>(k))();
      ap.rrt.seed = substream(c.seed, "rrt", static_cast<std::uint64_t>(k))();
      const AcquisitionPlan plan = plan_acquisition(vs.viewpoints, chain, grid, ap);
      if (plan.stops.empty())
        fail(Errc::Unreachable, plant_name(k) + ": none of the " + std::to_string(vs.viewpoints.size()) +
                                    " viewpoints is reachable");
      for (std::size_t i = 0; i < plan.stops.size(); ++i) {
        Viewpoint v = plan.stops[i];
        const Pose cam = forward_kinematics(chain, plan.configs[i]) * ap.hand_eye;
        v.position = cam.translation;
        v.frame = cam.rotation;
        stops.push_back(v);
      }
      dropped = plan.dropped.size();
      for (const auto& leg : plan.legs) timed_out += leg.timed_out ? 1 : 0;
      initial = plan.fitness_trace.front();
      final = plan.fitness_trace.back();
      travel = plan.total_travel;
      w.write_text(plant_name(k) + "_tour.csv", [&](std::ostream& os) { write_tour_csv(os, plan); });
      w.write_text(plant_name(k) + "_paths.csv", [&](std::ostream& os) { write_paths_csv(os, plan); });
      w.write_text(plant_name(k) + "_fitness.csv", [&](std::ostream& os) {
        os << "iteration,fitness\n" << std::setprecision(17);
        for (std::size_t i = 0; i < plan.fitness_trace.size(); ++i) os << i << ',' << plan.fitness_trace[i] << '\n';
      });
    } else {
      stops = vs.viewpoints;
    }
    w.write_text(plant_name(k) + "_stops.csv", [&](std::ostream& os) { write_viewpoints_csv(os, stops); });
    std::string warnings;
    for (const auto& msg : vs.warnings) warnings += (warnings.empty() ? "" : "; ") + msg;
    report << k << ',' << vs.parts << ',' << vs.count(ViewKind::FVP) << ',' << vs.count(ViewKind::VVP) << ','
           << vs.count(ViewKind::AVP) << ',' << stops.size() << ',' << dropped << ',' << initial << ',' << final << ','
           << travel << ',' << timed_out << ",\"" << warnings << "\"\n";
  }
  w.write("planning.csv", report.str());
}

inline void stage_capture(const RunConfig& c, ArtifactWriter& w) {
  const CaptureSetup setup = c.capture_setup();
  std::ostringstream list;
  list << "plant,position,viewpoint_id,kind,status,ms_plant_pixels,depth_plant_pixels\n";
  for (int k = 0; k < c.plants; ++k) {
    const SceneModel s = scene_for(c, k);
    const auto stops = read_viewpoints_file(c.out / "plan" / (plant_name(k) + "_stops.csv"));
    std::vector<DnFrame> rendered;
    for (std::size_t p = 0; p < stops.size(); ++p) {
      const auto& v = stops[p];
      list << k << ',' << p << ',' << v.id << ',' << to_string(v.kind) << ',';
      try {
        const auto seed = substream(c.seed, "capture", static_cast<std::uint64_t>(k) * 100000 + p)();
        const CapturedView cv = capture_view(s, v, v.pose(), setup, seed);
        w.write(frame_stem(k, p) + "_ms.frame", encode_frame(cv.ms));
        w.write(frame_stem(k, p) + "_depth.frame", encode_frame(cv.depth));
        w.write_ply(frame_stem(k, p) + "_ms.ply", frame_ply_table(cv.ms));
        list << "ok," << cv.ms.count(PixelLabel::Plant) << ',' << cv.depth.count(PixelLabel::Plant) << '\n';
        rendered.push_back(cv.ms);
      } catch (const Error& e) {
        if (e.code() != Errc::DegenerateView) throw;
        log_warn(plant_name(k) + " stop " + std::to_string(p) + ": " + e.what());
        list << "\"" << e.what() << "\",0,0\n";
      }
    }
    w.write_text(plant_name(k) + "_frames.csv",
                 [&](std::ostream& os) { write_frame_manifest(os, rendered, setup.light); });
  }
  w.write("frames.csv", list.str());

  const SceneModel ref_scene = scene_for(c, 0).reference_only();
  RenderOptions ro = setup.render;
  ro.seed = substream(c.seed, "reference")();
  const ReferenceDataset data = reference_dataset(ref_scene, setup.light, c.grid_deg, c.nbv.sight_distance, setup.ms,
                                                  ro, static_cast<std::size_t>(c.max_per_frame));
  PlyTable t;
  const char* names[] = {"vx", "vy", "vz", "nx", "ny", "nz"};
  for (int a = 0; a < 6; ++a) {
    auto& col = t.add(names[a], PlyType::Float64, data.size());
    for (std::size_t i = 0; i < data.size(); ++i) col[i] = data.features[i].vector()[a];
  }
  for (std::size_t b = 0; b < kBandCount; ++b) {
    auto& col = t.add(band_property("dn", b), PlyType::Float64, data.size());
    for (std::size_t i = 0; i < data.size(); ++i) col[i] = data.dn[i][static_cast<int>(b)];
  }
  w.write_ply("reference.ply", t);
  w.write_text("reference_frames.csv", [&](std::ostream& os) { write_viewpoints_csv(os, data.viewpoints); });
}

inline ReferenceDataset load_reference_dataset(const fs::path& p) {
  const PlyTable t = read_ply(p);
  ReferenceDataset d;
  const auto &vx = t.at("vx"), &vy = t.at("vy"), &vz = t.at("vz"), &nx = t.at("nx"), &ny = t.at("ny"), &nz = t.at("nz");
  d.features.resize(t.rows());
  d.dn.resize(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) d.features[i] = {Vec3(vx[i], vy[i], vz[i]), Vec3(nx[i], ny[i], nz[i])};
  for (std::size_t b = 0; b < kBandCount; ++b) {
    const auto& col = t.at(band_property("dn", b));
    for (std::size_t i = 0; i < t.rows(); ++i) d.dn[i][static_cast<int>(b)] = col[i];
  }
  return d;
}

inline void stage_train(const RunConfig& c, ArtifactWriter& w) {
  const ReferenceDataset data = load_reference_dataset(c.out / "capture" / "reference.ply");
  const auto pairs = reference_pairs(data, Spectrum::Constant(c.dark));
  const SplitDataset split = split_dataset(pairs, c.split, substream(c.seed, "split")());
  TrainOptions opt = c.train;
  opt.seed = substream(c.seed, "neref")();
  MlpArch arch = c.arch;
  arch.inputs = 6;
  arch.outputs = static_cast<int>(kBandCount);
  const auto [model, report] = train_neref(split, arch, opt);
  std::ostringstream ckpt;
  save_checkpoint(ckpt, model);
  w.write("neref.ckpt", ckpt.str());
  w.write_text("training.csv", [&](std::ostream& os) { write_train_report_csv(os, report); });
  w.write_text("score.csv", [&](std::ostream& os) {
    os << "samples,train,validation,test,stopping_epoch,best_epoch,test_r2,test_rmse,test_rmse_dn\n"
       << std::setprecision(17) << pairs.size() << ',' << split.train.size() << ',' << split.validation.size() << ','
       << split.test.size() << ',' << report.stopping_epoch << ',' << report.best_epoch << ',' << report.test_r2 << ','
       << report.test_rmse << ',' << report.test_rmse_dn << '\n';
  });
}

inline void stage_calibrate(const RunConfig& c, ArtifactWriter& w) {
  const CaptureSetup setup = c.capture_setup();
  std::istringstream ckpt(read_file(c.out / "train" / "neref.ckpt"));
  const NerefModel model = load_checkpoint(ckpt);
  RenderOptions ro = setup.render;
  ro.seed = substream(c.seed, "flat-reference")();
  const SceneModel ref_scene = scene_for(c, 0).reference_only();
  const Spectrum flat = flat_reference_dn(ref_scene.reference.material, setup.light, setup.ms, ro, c.nbv.sight_distance);
  w.write_text("flat_reference.csv", [&](std::ostream& os) {
    os << "band,wavelength_nm,dn\n" << std::setprecision(17);
    for (std::size_t b = 0; b < kBandCount; ++b) os << b << ',' << band_centers()[b] << ',' << flat[b] << '\n';
  });
  const Spectrum dark = Spectrum::Constant(c.dark);
  std::ostringstream list;
  list << "plant,position,viewpoint_id,calibration,plant_pixels,valid_pixels\n";
  for (int k = 0; k < c.plants; ++k)
    for (const auto& stop : captured_stops(c.out, k)) {
      const DnFrame ms = load_frame(c.out / "capture" / (frame_stem(k, stop.position) + "_ms.frame"));
      const CalibratedView cal = calibrate_view(ms, dark, model, flat, c.calib);
      for (const auto* r : {&cal.hr, &cal.fr}) {
        const std::string tag = r->provenance == Provenance::HR ? "hr" : "fr";
        w.write(frame_stem(k, stop.position) + "_" + tag + ".refl", encode_reflectance(*r));
        list << k << ',' << stop.position << ',' << stop.viewpoint_id << ',' << to_string(r->provenance) << ','
             << ms.count(PixelLabel::Plant) << ',' << r->valid_count() << '\n';
      }
      w.write_ply(frame_stem(k, stop.position) + "_hr.ply", reflectance_ply_table(cal.hr));
    }
  w.write("calibration.csv", list.str());
}

/// Views of fused points as rows: point index, viewpoint id, spectrum.
inline PlyTable views_ply_table(const FusionResult& r) {
  std::vector<std::pair<std::size_t, const ViewSpectrum*>> rows;
  for (std::size_t i = 0; i < r.views.size(); ++i)
    for (const auto& v : r.views[i]) rows.emplace_back(i, &v);
  PlyTable t;
  auto& point = t.add("point", PlyType::UInt32, rows.size());
  auto& view = t.add("viewpoint_id", PlyType::Int32, rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    point[j] = static_cast<double>(rows[j].first);
    view[j] = rows[j].second->viewpoint_id;
  }
  for (std::size_t b = 0; b < kBandCount; ++b) {
    auto& col = t.add(band_property("refl", b), PlyType::Float32, rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) col[j] = rows[j].second->reflectance[static_cast<int>(b)];
  }
  return t;
}

inline FusionResult load_fused(const fs::path& cloud, const fs::path& views) {
  FusionResult r;
  r.cloud = from_ply_table(read_ply(cloud));
  r.views.resize(r.cloud.size());
  const PlyTable t = read_ply(views);
  const auto& point = t.at("point");
  const auto& view = t.at("viewpoint_id");
  std::vector<const std::vector<double>*> cols;
  for (std::size_t b = 0; b < kBandCount; ++b) cols.push_back(&t.at(band_property("refl", b)));
  for (std::size_t j = 0; j < t.rows(); ++j) {
    const auto i = static_cast<std::size_t>(point[j]);
    require(i < r.views.size(), Errc::IoError, "view row refers to a missing point");
    ViewSpectrum v;
    v.viewpoint_id = static_cast<int>(view[j]);
    for (std::size_t b = 0; b < kBandCount; ++b) v.reflectance[static_cast<int>(b)] = (*cols[b])[j];
    r.views[i].push_back(v);
  }
  return r;
}

struct FusedSet {
  const char* name;
  const char* file;
  std::vector<ViewKind> kinds;
};

inline const std::vector<FusedSet>& fused_sets() {
  static const std::vector<FusedSet> sets = {
      {"FVP", "hr_fvp", {ViewKind::FVP}},
      {"FVP+VVP", "hr_fvp_vvp", {ViewKind::FVP, ViewKind::VVP}},
      {"FVP+VVP+AVP", "hr", {ViewKind::FVP, ViewKind::VVP, ViewKind::AVP}},
  };
  return sets;
}

inline void stage_fuse(const RunConfig& c, ArtifactWriter& w) {
  const CaptureSetup setup = c.capture_setup();
  const KinematicChain chain = arm_for(c);
  std::ostringstream list;
  list << "plant,set,calibration,frames,points,with_spectra,refined_frames\n";
  for (int k = 0; k < c.plants; ++k) {
    const auto stops = captured_stops(c.out, k);
    const auto planned = read_viewpoints_file(c.out / "plan" / (plant_name(k) + "_stops.csv"));
    std::vector<JointConfig> configs;
    if (c.robot) configs = read_tour_configs(c.out / "plan" / (plant_name(k) + "_tour.csv"));
    std::vector<PlacedView> hr, fr;
    for (const auto& stop : stops) {
      const DnFrame depth = load_frame(c.out / "capture" / (frame_stem(k, stop.position) + "_depth.frame"));
      const Pose pose = c.robot ? depth_camera_pose(forward_kinematics(chain, configs.at(stop.position)),
                                                    c.acquisition.hand_eye, setup.ms_from_rgbd)
                                : planned.at(stop.position).pose() * setup.ms_from_rgbd;
      for (auto* dst : {&hr, &fr}) {
        const std::string tag = dst == &hr ? "hr" : "fr";
        const ReflectanceFrame r =
            load_reflectance(c.out / "calibrate" / (frame_stem(k, stop.position) + "_" + tag + ".refl"));
        Frame3dmpc f = plant_points_only(ms_depth_align(depth, r, setup.ms_from_rgbd, c.align));
        f.viewpoint_id = stop.viewpoint_id;
        dst->push_back({stop.kind, std::move(f), pose});
      }
    }
    const auto record = [&](const char* set, const char* cal, const FusionResult& r) {
      std::size_t spectral = 0, refined = 0;
      for (std::size_t i = 0; i < r.cloud.size(); ++i) spectral += r.cloud.has_spectrum(i) ? 1 : 0;
      for (const auto& f : r.frames) refined += f.refined ? 1 : 0;
      list << k << ',' << set << ',' << cal << ',' << r.frames.size() << ',' << r.cloud.size() << ',' << spectral << ','
           << refined << '\n';
    };
    for (const auto& set : fused_sets()) {
      const FusionResult r = fuse_kinds(hr, set.kinds, c.fuse);
      w.write_ply(plant_name(k) + "_" + set.file + ".ply", to_ply_table(r.cloud));
      record(set.name, "HR", r);
      if (std::string(set.file) == "hr") {
        w.write_ply(plant_name(k) + "_hr_views.ply", views_ply_table(r));
        w.write_text(plant_name(k) + "_hr_frames.csv", [&](std::ostream& os) { write_fusion_report_csv(os, r); });
      }
    }
    const FusionResult r = fuse_kinds(fr, {ViewKind::FVP, ViewKind::VVP, ViewKind::AVP}, c.fuse);
    w.write_ply(plant_name(k) + "_fr.ply", to_ply_table(r.cloud));
    w.write_ply(plant_name(k) + "_fr_views.ply", views_ply_table(r));
    record("FVP+VVP+AVP", "FR", r);
  }
  w.write("fusion.csv", list.str());
}

/// Sample Pearson correlation over bands, NaN when undefined.
inline double band_pearson(const Spectrum& a, const Spectrum& b) {
  try {
    return pearson(std::vector<double>(a.data(), a.data() + kBandCount),
                   std::vector<double>(b.data(), b.data() + kBandCount));
  } catch (const Error& e) {
    if (e.code() != Errc::Undefined) throw;
    return std::numeric_limits<double>::quiet_NaN();
  }
}

inline void stage_evaluate(const RunConfig& c, ArtifactWriter& w) {
  const auto in = [&](const std::string& name) { return c.out / "fuse" / name; };
  std::ostringstream cov, rois_csv;
  cov << "plant,set,coverage,clipped_coverage\n" << std::setprecision(17);
  rois_csv << "plant,roi,leaf,spad,calibration,views,spectral_rmse,ed_range,pearson\n" << std::setprecision(17);
  std::map<std::string, std::vector<double>> coverage_by_set, clipped_by_set;
  std::vector<RoiMeasurement> all_hr, all_fr;
  std::vector<RoiSpectrum> roi_rows;
  std::map<std::string, std::vector<double>> pearson_by_cal;
  for (int k = 0; k < c.plants; ++k) {
    const SceneModel s = scene_for(c, k);
    for (const auto& set : fused_sets()) {
      const PointCloud fused = from_ply_table(read_ply(in(plant_name(k) + "_" + set.file + ".ply")));
      const double cv = coverage(fused, s.plant, c.coverage_voxel);
      const double cc = clipped_coverage(fused, s.plant, c.coverage_voxel);
      coverage_by_set[set.name].push_back(cv);
      clipped_by_set[set.name].push_back(cc);
      cov << k << ',' << set.name << ',' << cv << ',' << cc << '\n';
    }
    const FusionResult hr = load_fused(in(plant_name(k) + "_hr.ply"), in(plant_name(k) + "_hr_views.ply"));
    const FusionResult fr = load_fused(in(plant_name(k) + "_fr.ply"), in(plant_name(k) + "_fr_views.ply"));
    const auto rois = spad_ground_truth_link(s, substream(c.seed, "roi", static_cast<std::uint64_t>(k))(), c.roi);
    const auto mh = measure_rois(s, rois, hr, c.roi.radius);
    const auto mf = measure_rois(s, rois, fr, c.roi.radius);
    for (std::size_t i = 0; i < rois.size(); ++i)
      for (const auto* m : {&mh[i], &mf[i]}) {
        const bool is_hr = m == &mh[i];
        const double rmse = m->rmse().value_or(std::numeric_limits<double>::quiet_NaN());
        const double ed = m->ed().value_or(std::numeric_limits<double>::quiet_NaN());
        const double r = m->fused ? band_pearson(*m->fused, m->truth) : std::numeric_limits<double>::quiet_NaN();
        if (!std::isnan(r)) pearson_by_cal[is_hr ? "HR" : "FR"].push_back(r);
        rois_csv << k << ',' << i << ',' << m->leaf << ',' << m->spad << ',' << (is_hr ? "HR" : "FR") << ','
                 << m->views.views.size() << ',' << rmse << ',' << ed << ',' << r << '\n';
        if (m->fused)
          roi_rows.push_back({plant_name(k), static_cast<int>(i), is_hr ? Provenance::HR : Provenance::FR, *m->fused});
      }
    all_hr.insert(all_hr.end(), mh.begin(), mh.end());
    all_fr.insert(all_fr.end(), mf.begin(), mf.end());
  }
  w.write("coverage.csv", cov.str());
  w.write("rois.csv", rois_csv.str());
  w.write_text("roi_spectra.csv", [&](std::ostream& os) { write_roi_csv(os, roi_rows); });

  std::vector<Spectrum> xh, xf;
  std::vector<double> spad;
  for (std::size_t i = 0; i < all_hr.size(); ++i)
    if (all_hr[i].fused && all_fr[i].fused) {
      xh.push_back(*all_hr[i].fused);
      xf.push_back(*all_fr[i].fused);
      spad.push_back(all_hr[i].spad);
    }
  std::optional<PlsrComparison> plsr;
  try {
    plsr = compare_plsr(xh, xf, spad, c.plsr_repetitions, c.plsr_test_fraction, c.plsr_validation_fraction,
                        c.plsr_max_components, substream(c.seed, "plsr")());
  } catch (const Error& e) {
    if (e.code() != Errc::InsufficientPoints && e.code() != Errc::Precondition && e.code() != Errc::DegenerateTarget)
      throw;
    log_warn(std::string("PLSR skipped: ") + e.what());
  }
  std::vector<PlsrReportRow> plsr_rows;
  if (plsr)
    for (std::size_t r = 0; r < plsr->hr.size(); ++r) {
      plsr_rows.push_back({"HR", plsr->hr_components[r], plsr->train, plsr->test, plsr->hr[r].r2, plsr->hr[r].rmse});
      plsr_rows.push_back({"FR", plsr->fr_components[r], plsr->train, plsr->test, plsr->fr[r].r2, plsr->fr[r].rmse});
    }
  w.write_text("plsr.csv", [&](std::ostream& os) { write_plsr_csv(os, plsr_rows); });

  const auto mean = [](const std::vector<double>& v) {
    double s = 0;
    std::size_t n = 0;
    for (double x : v)
      if (!std::isnan(x)) {
        s += x;
        ++n;
      }
    return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  };
  std::ostringstream ev;
  ev << "metric,subset,value\n" << std::setprecision(17);
  for (const auto& set : fused_sets()) ev << "coverage," << set.name << ',' << mean(coverage_by_set[set.name]) << '\n';
  for (const auto& set : fused_sets())
    ev << "clipped_coverage," << set.name << ',' << mean(clipped_by_set[set.name]) << '\n';
  for (const auto* cal : {"HR", "FR"}) {
    const auto summary = summarize(std::string(cal) == "HR" ? all_hr : all_fr);
    ev << "spectral_rmse," << cal << ',' << summary.mean_rmse << '\n';
    ev << "ed_range," << cal << ',' << summary.mean_ed << '\n';
    ev << "ed_range_max," << cal << ',' << summary.max_ed << '\n';
    ev << "pearson," << cal << ',' << mean(pearson_by_cal[cal]) << '\n';
    ev << "rois_measured," << cal << ',' << summary.measured << '\n';
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> r2h, r2f, rmh, rmf;
  if (plsr)
    for (std::size_t r = 0; r < plsr->hr.size(); ++r) {
      r2h.push_back(plsr->hr[r].r2);
      r2f.push_back(plsr->fr[r].r2);
      rmh.push_back(plsr->hr[r].rmse);
      rmf.push_back(plsr->fr[r].rmse);
    }
  ev << "plsr_r2,HR," << (plsr ? mean(r2h) : nan) << '\n';
  ev << "plsr_r2,FR," << (plsr ? mean(r2f) : nan) << '\n';
  ev << "plsr_rmse,HR," << (plsr ? mean(rmh) : nan) << '\n';
  ev << "plsr_rmse,FR," << (plsr ? mean(rmf) : nan) << '\n';
  ev << "plsr_hr_wins,HR>=FR," << (plsr ? static_cast<double>(plsr->hr_wins) : nan) << '\n';
  ev << "plsr_samples,all," << spad.size() << '\n';
  w.write("evaluation.csv", ev.str());
}

inline void stage_report(const RunConfig& c, ArtifactWriter& w) {
  const auto ev = read_csv(c.out / "evaluate" / "evaluation.csv");
  const auto value = [&](const std::string& metric, const std::string& subset) {
    for (const auto& row : ev)
      if (row.at("metric") == metric && row.at("subset") == subset) return std::stod(row.at("value"));
    return std::numeric_limits<double>::quiet_NaN();
  };
  const auto plan = read_csv(c.out / "plan" / "planning.csv");
  const auto score = read_csv(c.out / "train" / "score.csv").at(0);
  std::ostringstream os;
  os << "plantscan report\n\n";
  os << "seed " << c.seed << ", " << c.plants << " plant(s), " << c.plant.leaf_count << " leaves each\n\n";
  os << "acquisition\n";
  for (const auto& row : plan) {
    os << "  plant " << row.at("plant") << ": " << row.at("fvp") << " FVP, " << row.at("vvp") << " VVP, "
       << row.at("avp") << " AVP; " << row.at("stops") << " stops, " << row.at("dropped") << " dropped";
    if (c.robot)
      os << "; joint travel " << fixed(std::stod(row.at("initial_fitness"))) << " -> "
         << fixed(std::stod(row.at("final_fitness"))) << " rad";
    os << '\n';
  }
  os << "\nreference field\n";
  os << "  samples " << score.at("samples") << ", epochs " << score.at("stopping_epoch") << " (best "
     << score.at("best_epoch") << ")\n";
  os << "  test R2 " << fixed(std::stod(score.at("test_r2"))) << ", normalized RMSE "
     << fixed(std::stod(score.at("test_rmse"))) << '\n';
  os << "\ncoverage at " << fixed(c.coverage_voxel * 1000, 1) << " mm voxels (unclipped / clipped)\n";
  for (const auto& set : fused_sets())
    os << "  " << set.name << ": " << fixed(value("coverage", set.name)) << " / "
       << fixed(value("clipped_coverage", set.name)) << '\n';
  os << "\nreflectance at ROIs          HR        FR\n";
  const auto line = [&](const std::string& label, const std::string& metric) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "  %-24s %8s  %8s\n", label.c_str(), fixed(value(metric, "HR")).c_str(),
                  fixed(value(metric, "FR")).c_str());
    os << buf;
  };
  line("spectral RMSE", "spectral_rmse");
  line("ED range (mean)", "ed_range");
  line("ED range (max)", "ed_range_max");
  line("Pearson vs truth", "pearson");
  line("SPAD PLSR test R2", "plsr_r2");
  line("SPAD PLSR test RMSE", "plsr_rmse");
  os << "  HR R2 >= FR R2 in " << fixed(value("plsr_hr_wins", "HR>=FR"), 0) << " of " << c.plsr_repetitions
     << " splits (" << fixed(value("plsr_samples", "all"), 0) << " ROI samples)\n";
  w.write("report.txt", os.str());
}

inline const std::vector<StageDef>& stage_table() {
  static const std::vector<StageDef> stages = {
      {"synth", {}, {"run", "scene"}, "spad.csv", stage_synth},
      {"plan", {"synth"}, {"run", "scene", "nbv", "robot"}, "planning.csv", stage_plan},
      {"capture", {"synth", "plan"}, {"run", "scene", "light", "camera", "render", "reference", "nbv"}, "frames.csv",
       stage_capture},
      {"train", {"capture"}, {"run", "neref", "render"}, "neref.ckpt", stage_train},
      {"calibrate", {"capture", "train"}, {"run", "scene", "light", "camera", "render", "calib", "nbv"},
       "calibration.csv", stage_calibrate},
      {"fuse", {"plan", "capture", "calibrate"}, {"run", "camera", "robot", "fusion"}, "fusion.csv", stage_fuse},
      {"evaluate", {"synth", "calibrate", "fuse"}, {"run", "scene", "metrics"}, "evaluation.csv", stage_evaluate},
      {"report", {"plan", "train", "evaluate"}, {"run", "scene", "robot", "metrics"}, "report.txt", stage_report},
  };
  return stages;
}

inline const StageDef& find_stage(const std::string& name) {
  for (const auto& s : stage_table())
    if (s.name == name) return s;
  fail(Errc::Precondition, "unknown stage '" + name + "'");
}

/// Runs one stage unless its inputs are unchanged since the recorded run.
/// Missing upstream artifacts raise StageDependencyError naming the file.
inline StageResult run_stage(const RunConfig& c, const std::string& name, bool force = false,
                             bool deterministic = true) {
  const StageDef& def = find_stage(name);
  Manifest manifest = Manifest::load(c.out);
  std::string inputs = "stage " + def.name + '\n' + canonical_config(c, def.sections);
  for (const auto& dep : def.deps) {
    const auto* rec = manifest.find(dep);
    const fs::path primary = c.out / dep / find_stage(dep).primary;
    if (!rec)
      fail(Errc::StageDependencyError,
           "missing upstream artifact '" + primary.string() + "' (run '" + dep + "' first)");
    for (const auto& [rel, hash] : rec->outputs) {
      const fs::path p = c.out / rel;
      if (!fs::exists(p))
        fail(Errc::StageDependencyError, "missing upstream artifact '" + p.string() + "' (rerun '" + dep + "')");
      inputs += rel + ' ' + sha256_file(p) + '\n';
    }
  }
  const std::string input_hash = sha256_hex(inputs);

  StageResult result;
  if (const auto* rec = manifest.find(def.name); rec && !force && rec->inputs == input_hash) {
    bool intact = true;
    for (const auto& [rel, hash] : rec->outputs) {
      const fs::path p = c.out / rel;
      if (!fs::exists(p) || sha256_file(p) != hash) {
        intact = false;
        break;
      }
    }
    if (intact) {
      result.skipped = true;
      result.files = rec->outputs.size();
      log_info(def.name + ": up to date");
      return result;
    }
  }

  const auto start = std::chrono::steady_clock::now();
  fs::remove_all(c.out / def.name);
  fs::create_directories(c.out / def.name);
  ArtifactWriter w(c.out, def.name);
  def.run(c, w);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.files = w.hashes().size();
  manifest.set(def.name, {input_hash, w.hashes(), result.seconds, deterministic});
  manifest.save(c.out);
  log_info(def.name + ": wrote " + std::to_string(result.files) + " files in " + fixed(result.seconds, 2) + " s");
  return result;
}

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order = [] {
    std::vector<std::string> o;
    for (const auto& s : stage_table()) o.push_back(s.name);
    return o;
  }();
  return order;
}

}  // namespace plantscan
