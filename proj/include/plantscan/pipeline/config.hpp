#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/pipeline/workflow.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace plantscan {

/// Every setting of a pipeline run. Lengths in meters, angles in degrees.
struct RunConfig {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::filesystem::path out = "out";
  int plants = 3;

  PlantSpec plant;
  bool leaf_count_set = false;
  double diffuse_ratio = 0.12;

  int ms_pixels = 64;
  int rgbd_width = 160, rgbd_height = 128;
  Vec3 ms_offset = Vec3(-0.03, 0.0, 0.0);  // depth-camera point to MS-camera point
  RenderOptions render;
  double dark = 8.0;

  NbvParams nbv;
  double gap_spacing_deg = 3.0, gap_increment_deg = 1.5;
  double segment_angle_deg = 10.0;
  RegionGrowingParams segment;

  bool robot = true;
  Vec3 plant_position = Vec3(0.45, 0.0, 0.0);  // plant origin in the arm base frame
  double map_resolution = 0.05;
  double capsule_radius = 0.04;
  AcquisitionParams acquisition;

  double grid_deg = 15.0;
  int max_per_frame = 150;

  MlpArch arch;
  TrainOptions train;
  SplitFractions split;

  CalibParams calib;

  FuseParams fuse;
  AlignParams align;

  double coverage_voxel = 0.005;
  SpadRoiParams roi;
  int plsr_repetitions = 10;
  double plsr_test_fraction = 0.3;
  double plsr_validation_fraction = 0.2;
  int plsr_max_components = 10;

  RunConfig() {
    roi.rois_per_plant = 12;
    train.max_epochs = 25;
    acquisition.hpso.iterations = 2000;
  }

  CaptureSetup capture_setup() const {
    CaptureSetup s;
    s.ms = ms_camera(ms_pixels);
    s.rgbd = rgbd_camera(rgbd_width, rgbd_height);
    s.ms_from_rgbd = Pose{Mat3::Identity(), ms_offset};
    s.light = default_light(diffuse_ratio);
    s.render = render;
    s.render.dark = Spectrum::Constant(dark);
    return s;
  }
  NbvParams nbv_params() const {
    NbvParams p = nbv;
    p.gap_spacing = deg2rad(gap_spacing_deg);
    p.gap_increment = deg2rad(gap_increment_deg);
    p.seed = seed;
    return p;
  }
  RegionGrowingParams segment_params() const {
    RegionGrowingParams p = segment;
    p.angle_threshold = deg2rad(segment_angle_deg);
    return p;
  }
  /// Seed of plant `k`.
  std::uint64_t plant_seed(int k) const { return substream(seed, "scene", static_cast<std::uint64_t>(k))(); }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Typed binding between a `section.key` name and a RunConfig field.
struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;  // throws std::invalid_argument on a bad value
  std::function<std::string(const RunConfig&)> get;
};

namespace detail {

inline double parse_double(const std::string& s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
    throw std::invalid_argument("expected a number, got '" + s + "'");
  return v;
}

inline long long parse_int(const std::string& s) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::invalid_argument("expected an integer, got '" + s + "'");
  return v;
}

inline std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw std::invalid_argument("expected a nonnegative integer, got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

inline Vec3 parse_vec3(const std::string& s) {
  std::string t = s;
  std::replace(t.begin(), t.end(), ',', ' ');
  std::istringstream is(t);
  std::string a, b, c, extra;
  if (!(is >> a >> b >> c) || (is >> extra)) throw std::invalid_argument("expected three numbers, got '" + s + "'");
  return {parse_double(a), parse_double(b), parse_double(c)};
}

template <class F>
ConfigKey real(std::string name, std::string help, F field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string& v) { field(c) = parse_double(v); },
          [field](const RunConfig& c) { return format_double(field(const_cast<RunConfig&>(c))); }};
}

template <class F>
ConfigKey integer(std::string name, std::string help, F field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(field(c))>;
            const long long x = parse_int(v);
            bool ok = true;
            if constexpr (std::is_unsigned_v<T>)
              ok = x >= 0 && static_cast<unsigned long long>(x) <= std::numeric_limits<T>::max();
            else
              ok = x >= static_cast<long long>(std::numeric_limits<T>::min()) &&
                   x <= static_cast<long long>(std::numeric_limits<T>::max());
            if (!ok) throw std::invalid_argument("integer out of range: '" + v + "'");
            field(c) = static_cast<T>(x);
          },
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <class F>
ConfigKey boolean(std::string name, std::string help, F field) {
  return {std::move(name), std::move(help), [field](RunConfig& c, const std::string& v) { field(c) = parse_bool(v); },
          [field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <class F>
ConfigKey vec3(std::string name, std::string help, F field) {
  return {std::move(name), std::move(help), [field](RunConfig& c, const std::string& v) { field(c) = parse_vec3(v); },
          [field](const RunConfig& c) {
            const Vec3& x = field(const_cast<RunConfig&>(c));
            return format_double(x.x()) + ' ' + format_double(x.y()) + ' ' + format_double(x.z());
          }};
}

}  // namespace detail

/// The full key schema, grouped by section.
inline const std::vector<ConfigKey>& config_schema() {
  using namespace detail;
  using C = RunConfig;
  static const std::vector<ConfigKey> keys = {
      {"run.seed", "root seed (required here or via --seed)",
       [](C& c, const std::string& v) {
         c.seed = parse_u64(v);
         c.seed_set = true;
       },
       [](const C& c) { return std::to_string(c.seed); }},
      {"run.out", "output directory", [](C& c, const std::string& v) { c.out = v; },
       [](const C& c) { return c.out.string(); }},
      integer("run.plants", "number of synthetic plants", [](C& c) -> int& { return c.plants; }),

      {"scene.leaf_count", "leaves per plant (required)",
       [](C& c, const std::string& v) {
         const long long n = parse_int(v);
         if (n > 1000 || n < -1000) throw std::invalid_argument("integer out of range: '" + v + "'");
         c.plant.leaf_count = static_cast<int>(n);
         c.leaf_count_set = true;
       },
       [](const C& c) { return std::to_string(c.plant.leaf_count); }},
      real("scene.leaf_length", "blade length", [](C& c) -> double& { return c.plant.leaf_length; }),
      real("scene.width_ratio", "blade width over length", [](C& c) -> double& { return c.plant.width_ratio; }),
      real("scene.inclination_min", "smallest leaf inclination", [](C& c) -> double& { return c.plant.inclination_min_deg; }),
      real("scene.inclination_max", "largest leaf inclination", [](C& c) -> double& { return c.plant.inclination_max_deg; }),
      real("scene.curvature", "blade bending, 1/m", [](C& c) -> double& { return c.plant.curvature; }),
      real("scene.occlusion", "0 spreads leaves, 1 stacks them", [](C& c) -> double& { return c.plant.occlusion; }),
      real("scene.spacing", "surface sampling distance", [](C& c) -> double& { return c.plant.spacing; }),
      real("scene.base_height", "height of the lowest leaf", [](C& c) -> double& { return c.plant.base_height; }),
      real("scene.plant_height", "stem height spanned by the leaves", [](C& c) -> double& { return c.plant.plant_height; }),
      real("scene.spad_min", "lowest leaf SPAD", [](C& c) -> double& { return c.plant.spad_min; }),
      real("scene.spad_max", "highest leaf SPAD", [](C& c) -> double& { return c.plant.spad_max; }),

      real("light.diffuse_ratio", "diffuse over parallel intensity", [](C& c) -> double& { return c.diffuse_ratio; }),

      integer("camera.ms_pixels", "multispectral image side", [](C& c) -> int& { return c.ms_pixels; }),
      integer("camera.rgbd_width", "depth image width", [](C& c) -> int& { return c.rgbd_width; }),
      integer("camera.rgbd_height", "depth image height", [](C& c) -> int& { return c.rgbd_height; }),
      vec3("camera.ms_offset", "depth-camera point to MS-camera point translation", [](C& c) -> Vec3& { return c.ms_offset; }),

      real("render.noise", "sensor noise relative to signal", [](C& c) -> double& { return c.render.noise; }),
      real("render.dark", "dark current, DN", [](C& c) -> double& { return c.dark; }),
      real("render.splat_factor", "point splat radius over spacing", [](C& c) -> double& { return c.render.splat_factor; }),

      real("nbv.sight_distance", "camera distance to its target", [](C& c) -> double& { return c.nbv.sight_distance; }),
      real("nbv.bin_deg", "hemisphere bin size", [](C& c) -> double& { return c.nbv.bin_deg; }),
      real("nbv.gap_spacing", "max-gap sample spacing", [](C& c) -> double& { return c.gap_spacing_deg; }),
      real("nbv.gap_increment", "max-gap radius increment", [](C& c) -> double& { return c.gap_increment_deg; }),
      real("nbv.splat_factor", "occluder splat over local spacing", [](C& c) -> double& { return c.nbv.splat_factor; }),
      real("nbv.segment_angle", "region-growing normal threshold", [](C& c) -> double& { return c.segment_angle_deg; }),
      real("nbv.segment_curvature", "region-growing curvature threshold", [](C& c) -> double& { return c.segment.curvature_threshold; }),
      integer("nbv.segment_min_cluster", "smallest part kept", [](C& c) -> std::size_t& { return c.segment.min_cluster; }),

      boolean("robot.enabled", "plan arm motion; off captures at the exact viewpoints", [](C& c) -> bool& { return c.robot; }),
      vec3("robot.plant_position", "plant origin in the arm base frame", [](C& c) -> Vec3& { return c.plant_position; }),
      real("robot.map_resolution", "collision map voxel", [](C& c) -> double& { return c.map_resolution; }),
      real("robot.capsule_radius", "link clearance radius", [](C& c) -> double& { return c.capsule_radius; }),
      integer("robot.ik_restarts", "IK random restarts", [](C& c) -> int& { return c.acquisition.ik.restarts; }),
      integer("robot.hpso_swarm", "HPSO particles", [](C& c) -> int& { return c.acquisition.hpso.swarm; }),
      integer("robot.hpso_iterations", "HPSO iterations", [](C& c) -> int& { return c.acquisition.hpso.iterations; }),
      integer("robot.rrt_iterations", "RRT iteration budget per leg", [](C& c) -> int& { return c.acquisition.rrt.max_iterations; }),
      real("robot.rrt_step", "RRT extension step, rad", [](C& c) -> double& { return c.acquisition.rrt.step; }),

      real("reference.grid", "reference hemisphere grid spacing", [](C& c) -> double& { return c.grid_deg; }),
      integer("reference.samples_per_frame", "pixels kept per reference frame, 0 keeps all", [](C& c) -> int& { return c.max_per_frame; }),

      integer("neref.hidden_layers", "hidden layers", [](C& c) -> int& { return c.arch.hidden_layers; }),
      integer("neref.width", "neurons per hidden layer", [](C& c) -> int& { return c.arch.width; }),
      integer("neref.epochs", "maximum epochs", [](C& c) -> int& { return c.train.max_epochs; }),
      integer("neref.batch", "mini-batch size", [](C& c) -> int& { return c.train.batch_size; }),
      real("neref.learning_rate", "Adam step size", [](C& c) -> double& { return c.train.learning_rate; }),
      real("neref.lr_decay", "per-epoch step-size factor", [](C& c) -> double& { return c.train.lr_decay; }),
      integer("neref.patience", "early-stopping patience, epochs", [](C& c) -> int& { return c.train.patience; }),
      real("neref.train_fraction", "training share", [](C& c) -> double& { return c.split.train; }),
      real("neref.validation_fraction", "validation share", [](C& c) -> double& { return c.split.validation; }),
      real("neref.test_fraction", "test share", [](C& c) -> double& { return c.split.test; }),

      real("calib.denominator_floor", "smallest usable reference DN", [](C& c) -> double& { return c.calib.denominator_floor; }),
      real("calib.max_reflectance", "largest plausible reflectance", [](C& c) -> double& { return c.calib.max_reflectance; }),

      real("fusion.voxel", "merge voxel", [](C& c) -> double& { return c.fuse.voxel; }),
      boolean("fusion.icp", "refine each frame against the accumulated cloud", [](C& c) -> bool& { return c.fuse.icp; }),
      integer("fusion.icp_iterations", "ICP iteration cap", [](C& c) -> int& { return c.fuse.icp_params.max_iter; }),
      real("fusion.icp_gate", "ICP correspondence distance gate", [](C& c) -> double& { return c.fuse.icp_params.max_corr_dist; }),
      real("fusion.depth_tolerance", "MS-depth association tolerance", [](C& c) -> double& { return c.align.depth_tolerance; }),
      real("fusion.min_valid_weight", "valid bilinear weight needed for a spectrum", [](C& c) -> double& { return c.align.min_valid_weight; }),

      real("metrics.coverage_voxel", "coverage voxel", [](C& c) -> double& { return c.coverage_voxel; }),
      integer("metrics.rois_per_plant", "SPAD ROIs per plant", [](C& c) -> int& { return c.roi.rois_per_plant; }),
      real("metrics.roi_radius", "ROI radius", [](C& c) -> double& { return c.roi.radius; }),
      integer("metrics.plsr_repetitions", "seeded PLSR splits", [](C& c) -> int& { return c.plsr_repetitions; }),
      real("metrics.plsr_test_fraction", "PLSR test share", [](C& c) -> double& { return c.plsr_test_fraction; }),
      real("metrics.plsr_validation_fraction", "PLSR validation share", [](C& c) -> double& { return c.plsr_validation_fraction; }),
      integer("metrics.plsr_max_components", "largest PLSR component count tried", [](C& c) -> int& { return c.plsr_max_components; }),
  };
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_schema())
    if (k.name == name) return &k;
  return nullptr;
}

/// Resolved values of every key in `sections`, one `key = value` line each.
inline std::string canonical_config(const RunConfig& c, const std::vector<std::string>& sections) {
  std::string out;
  for (const auto& k : config_schema()) {
    const std::string section = k.name.substr(0, k.name.find('.'));
    if (std::find(sections.begin(), sections.end(), section) == sections.end() || k.name == "run.out") continue;
    out += k.name + " = " + k.get(c) + '\n';
  }
  return out;
}

/// Range checks that apply after all keys are read.
inline void validate_config(const RunConfig& c) {
  const auto bad = [](const std::string& key, const std::string& why) { fail(Errc::ConfigError, key + ": " + why); };
  if (!c.seed_set) bad("run.seed", "missing required key (or pass --seed)");
  if (!c.leaf_count_set) bad("scene.leaf_count", "missing required key");
  if (c.plants < 1) bad("run.plants", "scene is empty; need at least one plant");
  if (c.plant.leaf_count < 1) bad("scene.leaf_count", "scene is empty; need at least one leaf");
  try {
    c.plant.validate();
  } catch (const Error& e) {
    bad("scene", e.what());
  }
  if (c.ms_pixels < 4 || c.rgbd_width < 4 || c.rgbd_height < 4) bad("camera", "images need at least 4 pixels a side");
  if (c.render.noise < 0 || c.dark < 0) bad("render", "noise and dark current must be nonnegative");
  if (c.nbv.sight_distance <= 0) bad("nbv.sight_distance", "must be positive");
  if (!(c.gap_increment_deg > 0 && c.gap_increment_deg < c.gap_spacing_deg)) bad("nbv.gap_increment", "must lie in (0, gap_spacing)");
  if (c.grid_deg <= 0 || std::abs(90.0 / c.grid_deg - std::round(90.0 / c.grid_deg)) > 1e-9)
    bad("reference.grid", "must divide 90 degrees");
  if (c.max_per_frame < 0) bad("reference.samples_per_frame", "must be nonnegative");
  if (c.arch.hidden_layers < 1 || c.arch.width < 1) bad("neref", "network needs at least one hidden neuron");
  if (c.train.max_epochs < 1 || c.train.batch_size < 1 || c.train.learning_rate <= 0) bad("neref", "invalid training settings");
  if (std::abs(c.split.train + c.split.validation + c.split.test - 1.0) > 1e-9) bad("neref", "split fractions must sum to 1");
  if (c.fuse.voxel <= 0 || c.coverage_voxel <= 0) bad("fusion.voxel", "voxel sizes must be positive");
  if (c.roi.rois_per_plant < 1 || c.roi.radius <= 0) bad("metrics", "invalid ROI settings");
  if (c.plsr_repetitions < 1 || c.plsr_max_components < 1) bad("metrics", "invalid PLSR settings");
  if (c.acquisition.hpso.swarm < 1 || c.acquisition.hpso.iterations < 0) bad("robot", "invalid HPSO settings");
}

/// Parses `[section]` headers and `key = value` lines; `#` starts a comment.
/// Unknown keys, duplicates and malformed values are reported with their line.
inline RunConfig parse_config(std::istream& is, const std::string& source = "config") {
  RunConfig c;
  std::string line, section;
  std::map<std::string, int> seen;
  for (int n = 1; std::getline(is, line); ++n) {
    const auto hash = line.find('#');
    const std::string t = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
    const std::string where = source + ":" + std::to_string(n) + ": ";
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) fail(Errc::ConfigError, where + "malformed section header '" + t + "'");
      section = detail::trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(Errc::ConfigError, where + "expected 'key = value', got '" + t + "'");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (section.empty()) fail(Errc::ConfigError, where + "key '" + key + "' appears before any [section]");
    const std::string full = section + "." + key;
    const ConfigKey* k = find_config_key(full);
    if (!k) fail(Errc::ConfigError, where + "unknown key '" + full + "'");
    if (const auto it = seen.find(full); it != seen.end())
      fail(Errc::ConfigError, where + "key '" + full + "' already set on line " + std::to_string(it->second));
    seen[full] = n;
    try {
      k->set(c, value);
    } catch (const std::invalid_argument& e) {
      fail(Errc::ConfigError, where + "key '" + full + "': " + e.what());
    }
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(Errc::ConfigError, "cannot open config file '" + path.string() + "'");
  return parse_config(is, path.string());
}

}  // namespace plantscan
