#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/rng.hpp>
#include <plantscan/core/types.hpp>
#include <plantscan/lightfield/scene.hpp>
#include <plantscan/pointcloud/kdtree.hpp>
#include <plantscan/pointcloud/point_cloud.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace plantscan {

inline std::set<VoxelKey> occupied_voxels(const std::vector<Vec3>& points, double voxel) {
  std::set<VoxelKey> s;
  for (const auto& p : points) s.insert(voxel_key(p, voxel));
  return s;
}

/// Occupied fused voxels over occupied ground-truth voxels. Fused voxels
/// outside the ground truth still count, so misregistration can push it above 1.
inline double coverage(const PointCloud& fused, const PointCloud& gt, double voxel) {
  require(!gt.empty(), Errc::EmptyInput, "ground-truth cloud is empty");
  require(voxel > 0, Errc::Precondition, "voxel size must be positive");
  return static_cast<double>(occupied_voxels(fused.points, voxel).size()) /
         static_cast<double>(occupied_voxels(gt.points, voxel).size());
}

/// Share of ground-truth voxels that the fused cloud occupies.
inline double clipped_coverage(const PointCloud& fused, const PointCloud& gt, double voxel) {
  require(!gt.empty(), Errc::EmptyInput, "ground-truth cloud is empty");
  require(voxel > 0, Errc::Precondition, "voxel size must be positive");
  const auto g = occupied_voxels(gt.points, voxel);
  const auto f = occupied_voxels(fused.points, voxel);
  std::size_t hit = 0;
  for (const auto& k : f) hit += g.count(k);
  return static_cast<double>(hit) / static_cast<double>(g.size());
}

/// Reflectance of one region seen from several viewpoints, plus its truth.
struct SpectrumSet {
  std::vector<Spectrum> views;
  std::optional<Spectrum> ground_truth;
};

inline double band_rms(const Spectrum& a, const Spectrum& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(kBandCount));
}

/// Per-view band RMS against the truth, averaged over the views.
inline double spectral_rmse(const SpectrumSet& set) {
  require(set.ground_truth.has_value(), Errc::Precondition, "spectral RMSE needs a ground-truth spectrum");
  require(!set.views.empty(), Errc::EmptyInput, "spectrum set has no viewpoints");
  double sum = 0;
  for (const auto& s : set.views) sum += band_rms(s, *set.ground_truth);
  return sum / static_cast<double>(set.views.size());
}

/// Largest band RMS distance between any two views.
inline double ed_range(const SpectrumSet& set) {
  if (set.views.size() < 2) fail(Errc::Undefined, "ED range needs at least two viewpoints");
  double best = 0;
  for (std::size_t m = 0; m < set.views.size(); ++m)
    for (std::size_t n = m + 1; n < set.views.size(); ++n) best = std::max(best, band_rms(set.views[m], set.views[n]));
  return best;
}

/// Sample Pearson correlation.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, Errc::Precondition, "pearson needs two equal-length series");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0 || syy <= 0) fail(Errc::Undefined, "pearson is undefined for a constant series");
  const double r = (sxy / (n - 1)) / (std::sqrt(sxx / (n - 1)) * std::sqrt(syy / (n - 1)));
  return std::clamp(r, -1.0, 1.0);
}

struct PlsrModel {
  int components = 0;
  bool scaled = false;
  Eigen::VectorXd x_mean, x_scale;
  double y_mean = 0;
  Eigen::MatrixXd weights, loadings, scores;  // W, P (bands × components), T (samples × components)
  Eigen::VectorXd y_loadings;                 // q
  Eigen::VectorXd coefficients;               // on the original X scale
  double intercept = 0;

  double predict(const Eigen::VectorXd& x) const { return x.dot(coefficients) + intercept; }
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    return (x * coefficients).array() + intercept;
  }
};

/// Single-response PLS by NIPALS with deflation. Rows of `x` are samples. With
/// `scale`, columns are divided by their sample standard deviation (constant
/// columns are left unscaled).
inline PlsrModel plsr_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int ncomp, bool scale = false) {
  const auto n = x.rows(), m = x.cols();
  require(y.size() == n, Errc::Precondition, "X and y disagree on the sample count");
  require(ncomp >= 1 && n >= ncomp + 1 && ncomp <= m, Errc::Precondition,
          "component count must lie in [1, min(samples - 1, bands)]");
  PlsrModel model;
  model.scaled = scale;
  model.x_mean = x.colwise().mean().transpose();
  model.y_mean = y.mean();
  Eigen::VectorXd y0 = y.array() - model.y_mean;
  require(y0.squaredNorm() > 1e-24 * std::max(1.0, y.squaredNorm()), Errc::DegenerateTarget,
          "target has zero variance");
  model.x_scale = Eigen::VectorXd::Ones(m);
  Eigen::MatrixXd x0 = x.rowwise() - model.x_mean.transpose();
  if (scale)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double sd = std::sqrt(x0.col(j).squaredNorm() / static_cast<double>(n - 1));
      if (sd > 0) {
        model.x_scale[j] = sd;
        x0.col(j) /= sd;
      }
    }
  const double x_norm = std::max(1.0, x0.norm());
  model.weights.resize(m, ncomp);
  model.loadings.resize(m, ncomp);
  model.scores.resize(n, ncomp);
  model.y_loadings.resize(ncomp);
  int a = 0;
  for (; a < ncomp; ++a) {
    Eigen::VectorXd w = x0.transpose() * y0;
    const double wn = w.norm();
    if (wn <= 1e-13 * x_norm * std::max(1.0, y0.norm())) break;  // nothing left to explain
    w /= wn;
    const Eigen::VectorXd t = x0 * w;
    const double tt = t.squaredNorm();
    if (tt <= 0) break;
    const Eigen::VectorXd p = x0.transpose() * t / tt;
    const double q = y0.dot(t) / tt;
    x0 -= t * p.transpose();
    y0 -= q * t;
    model.weights.col(a) = w;
    model.loadings.col(a) = p;
    model.scores.col(a) = t;
    model.y_loadings[a] = q;
  }
  model.components = a;
  model.weights.conservativeResize(m, a);
  model.loadings.conservativeResize(m, a);
  model.scores.conservativeResize(n, a);
  model.y_loadings.conservativeResize(a);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
  if (a > 0) {
    const Eigen::MatrixXd ptw = model.loadings.transpose() * model.weights;
    b = model.weights * ptw.fullPivLu().solve(model.y_loadings);
  }
  model.coefficients = b.cwiseQuotient(model.x_scale);
  model.intercept = model.y_mean - model.x_mean.dot(model.coefficients);
  require(model.coefficients.allFinite(), Errc::DegenerateTarget, "regression coefficients are not finite");
  return model;
}

struct RegressionMetrics {
  double r2 = 0, rmse = 0;
};

/// R² against the test mean and root mean squared error.
inline RegressionMetrics regression_metrics(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  require(pred.size() == truth.size() && truth.size() > 0, Errc::Precondition, "prediction and truth sizes differ");
  const double ss_res = (pred - truth).squaredNorm();
  const double ss_tot = (truth.array() - truth.mean()).matrix().squaredNorm();
  return {ss_tot > 0 ? 1.0 - ss_res / ss_tot : std::numeric_limits<double>::quiet_NaN(),
          std::sqrt(ss_res / static_cast<double>(truth.size()))};
}

inline RegressionMetrics plsr_eval(const PlsrModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  require(x.cols() == model.coefficients.size(), Errc::Precondition, "band count differs from the model");
  return regression_metrics(model.predict(x), y);
}

/// Fits 1..max_components and keeps the count with the lowest validation RMSE
/// (ties to fewer components).
inline PlsrModel plsr_select(const Eigen::MatrixXd& x_train, const Eigen::VectorXd& y_train,
                             const Eigen::MatrixXd& x_val, const Eigen::VectorXd& y_val, int max_components = 10,
                             bool scale = false) {
  const int cap = static_cast<int>(std::min<Eigen::Index>({max_components, x_train.rows() - 1, x_train.cols()}));
  require(cap >= 1, Errc::Precondition, "not enough samples for PLSR");
  PlsrModel best;
  double best_rmse = std::numeric_limits<double>::infinity();
  for (int a = 1; a <= cap; ++a) {
    PlsrModel m = plsr_fit(x_train, y_train, a, scale);
    if (m.components < a) break;
    const double rmse = plsr_eval(m, x_val, y_val).rmse;
    if (rmse < best_rmse) {
      best_rmse = rmse;
      best = std::move(m);
    }
  }
  return best;
}

/// Ratio of the bands nearest 753.8 nm and 666.8 nm.
inline double rvi(const Spectrum& s) {
  const double red = s[static_cast<Eigen::Index>(nearest_band(666.8))];
  require(red > 0, Errc::Undefined, "red band reflectance is zero");
  return s[static_cast<Eigen::Index>(nearest_band(753.8))] / red;
}

struct SpadRoiParams {
  int rois_per_plant = 6;
  double radius = 0.004;         // m
  double edge_margin_samples = 2;
  std::size_t min_points = 5;
};

/// Sampled region on one leaf with its true mean reflectance and SPAD value.
struct SpadSample {
  int leaf = 0;
  std::size_t center = 0;             // plant point index
  std::vector<std::size_t> members;   // plant point indices
  double spad = 0;
  Spectrum spectrum = Spectrum::Zero();  // true reflectance relative to the reference
};

/// Places ROIs on leaf interiors, cycling through the leaves in a seeded
/// order, and pairs each with the leaf's SPAD value.
inline std::vector<SpadSample> spad_ground_truth_link(const SceneModel& scene, std::uint64_t seed,
                                                      const SpadRoiParams& p = {}) {
  require(!scene.leaves.empty(), Errc::EmptyInput, "scene has no leaves");
  require(p.rois_per_plant >= 1 && p.radius > 0, Errc::Precondition, "invalid ROI parameters");
  const double margin = p.edge_margin_samples * scene.spacing;
  const KdTree tree(scene.plant.points);
  Rng rng = substream(seed, "spad-roi");
  std::vector<std::size_t> order(scene.leaves.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

  const Spectrum ref = scene.reference.material.albedo;
  std::vector<SpadSample> out;
  for (int r = 0; r < p.rois_per_plant; ++r) {
    const Leaf& leaf = scene.leaves[order[static_cast<std::size_t>(r) % order.size()]];
    std::vector<std::size_t> interior;
    for (std::size_t i = leaf.begin; i < leaf.end; ++i)
      if (scene.edge_distance[i] >= margin + p.radius) interior.push_back(i);
    if (interior.empty())
      for (std::size_t i = leaf.begin; i < leaf.end; ++i)
        if (scene.edge_distance[i] >= margin) interior.push_back(i);
    require(!interior.empty(), Errc::InsufficientPoints, "leaf " + std::to_string(leaf.id) + " has no interior");
    SpadSample s;
    s.leaf = leaf.id;
    s.center = interior[uniform_index(rng, interior.size())];
    for (auto i : tree.radius_search(scene.plant.points[s.center], p.radius))
      if (scene.leaf_of[i] == leaf.id && scene.edge_distance[i] >= margin) s.members.push_back(i);
    std::sort(s.members.begin(), s.members.end());
    require(s.members.size() >= std::min(p.min_points, interior.size()), Errc::InsufficientPoints,
            "ROI on leaf " + std::to_string(leaf.id) + " has too few points");
    s.spad = leaf.spad;
    for (auto i : s.members) s.spectrum += scene.material_of(i).albedo.cwiseQuotient(ref);
    s.spectrum /= static_cast<double>(s.members.size());
    out.push_back(std::move(s));
  }
  return out;
}

struct PlsrReportRow {
  std::string calibration;
  int components = 0;
  std::size_t train = 0, test = 0;
  double r2 = 0, rmse = 0;
};

inline void write_plsr_csv(std::ostream& os, const std::vector<PlsrReportRow>& rows) {
  os << "calibration,components,train_samples,test_samples,r2,rmse\n" << std::setprecision(17);
  for (const auto& r : rows)
    os << r.calibration << ',' << r.components << ',' << r.train << ',' << r.test << ',' << r.r2 << ',' << r.rmse
       << '\n';
}

}  // namespace plantscan
