#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/log.hpp>
#include <plantscan/core/rng.hpp>
#include <plantscan/lightfield/shading.hpp>
#include <plantscan/neref/mlp.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace plantscan {

/// One training example: light-field feature and its reference DN spectrum.
struct FieldSample {
  LightFieldFeature feature;
  Spectrum dn = Spectrum::Zero();
};

struct SplitFractions {
  double train = 0.70, validation = 0.15, test = 0.15;
};

struct SplitDataset {
  std::vector<FieldSample> train, validation, test;
  SplitFractions fractions;
};

/// Seeded shuffle, then contiguous train/validation/test slices. Validation
/// and test sizes are floored; the remainder goes to train.
inline SplitDataset split_dataset(const std::vector<FieldSample>& pairs, SplitFractions f, std::uint64_t seed) {
  require(!pairs.empty(), Errc::EmptyInput, "cannot split an empty dataset");
  require(std::abs(f.train + f.validation + f.test - 1.0) <= 1e-9 && f.train >= 0 && f.validation >= 0 && f.test >= 0,
          Errc::Precondition, "split fractions must be nonnegative and sum to 1");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = substream(seed, "split");
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  const std::size_t n = pairs.size();
  const auto nval = static_cast<std::size_t>(std::floor(f.validation * n + 1e-9));
  const auto ntest = static_cast<std::size_t>(std::floor(f.test * n + 1e-9));
  const std::size_t ntrain = n - nval - ntest;
  SplitDataset s;
  s.fractions = f;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = pairs[order[i]];
    if (i < ntrain)
      s.train.push_back(p);
    else if (i < ntrain + nval)
      s.validation.push_back(p);
    else
      s.test.push_back(p);
  }
  return s;
}

/// Per-dimension min-max statistics of the training inputs and outputs.
struct NormStats {
  Vector in_min, in_max, out_min, out_max;

  static Vector scale(const Vector& x, const Vector& lo, const Vector& hi) {
    Vector y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = hi[i] > lo[i] ? (x[i] - lo[i]) / (hi[i] - lo[i]) : 0.0;
    return y;
  }
  static Vector unscale(const Vector& y, const Vector& lo, const Vector& hi) {
    return lo + (hi - lo).cwiseProduct(y);
  }
  Vector normalize_input(const Vector& x) const { return scale(x, in_min, in_max); }
  Vector normalize_output(const Vector& y) const { return scale(y, out_min, out_max); }
  Vector denormalize_output(const Vector& y) const { return unscale(y, out_min, out_max); }
};

inline Vector feature_vector(const LightFieldFeature& f) { return f.vector(); }

/// Min-max stats of a set of row vectors (one per sample).
inline std::pair<Vector, Vector> column_range(const std::vector<Vector>& rows) {
  require(!rows.empty(), Errc::EmptyInput, "range of an empty set");
  Vector lo = rows.front(), hi = rows.front();
  for (const auto& r : rows) {
    lo = lo.cwiseMin(r);
    hi = hi.cwiseMax(r);
  }
  return {lo, hi};
}

inline NormStats fit_norm(const std::vector<FieldSample>& train) {
  require(!train.empty(), Errc::EmptyInput, "normalization needs training data");
  std::vector<Vector> xs, ys;
  for (const auto& s : train) {
    xs.push_back(feature_vector(s.feature));
    ys.push_back(Vector(s.dn));
  }
  NormStats st;
  std::tie(st.in_min, st.in_max) = column_range(xs);
  std::tie(st.out_min, st.out_max) = column_range(ys);
  return st;
}

/// Normalized (features, targets) matrices, one sample per column.
inline std::pair<Matrix, Matrix> normalized_batch(const NormStats& st, const std::vector<FieldSample>& data) {
  Matrix x(6, static_cast<Eigen::Index>(data.size())), y(kBandCount, static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    x.col(c) = st.normalize_input(feature_vector(data[i].feature));
    y.col(c) = st.normalize_output(Vector(data[i].dn));
  }
  return {x, y};
}

struct TrainOptions {
  double learning_rate = 1e-3;
  double lr_decay = 1.0;  // multiplied into the rate after every epoch
  int batch_size = 256;
  int max_epochs = 400;
  int patience = 20;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> train_mse, val_mse;  // per epoch, normalized scale
  int stopping_epoch = 0;                  // epochs run
  int best_epoch = 0;                      // 1-based epoch of the returned parameters
  double test_r2 = std::numeric_limits<double>::quiet_NaN();
  double test_rmse = std::numeric_limits<double>::quiet_NaN();     // normalized scale
  double test_rmse_dn = std::numeric_limits<double>::quiet_NaN();  // DN scale
};

struct NerefModel {
  MlpParams params;
  NormStats stats;
  bool trained = false;
};

struct RegressionScore {
  double r2 = 0, rmse = 0;
};

/// Pooled R^2 against per-output means, and RMSE over all entries.
inline RegressionScore score_predictions(const Matrix& pred, const Matrix& truth) {
  require(pred.rows() == truth.rows() && pred.cols() == truth.cols() && pred.size() > 0, Errc::Precondition,
          "prediction and truth shapes differ");
  const Vector mean = truth.rowwise().mean();
  const double ss_res = (pred - truth).squaredNorm();
  const double ss_tot = (truth.colwise() - mean).squaredNorm();
  return {ss_tot > 0 ? 1.0 - ss_res / ss_tot : std::numeric_limits<double>::quiet_NaN(),
          std::sqrt(ss_res / static_cast<double>(truth.size()))};
}

inline double batch_mse(const MlpParams& p, const Matrix& x, const Matrix& y) {
  if (x.cols() == 0) return std::numeric_limits<double>::quiet_NaN();
  return (mlp_forward(p, x) - y).squaredNorm() / static_cast<double>(y.size());
}

/// Mini-batch Adam on normalized MSE with early stopping on validation MSE.
/// Returns the best-validation parameters.
inline std::pair<NerefModel, TrainReport> train_neref(const SplitDataset& split, const MlpArch& arch,
                                                      const TrainOptions& opt) {
  require(opt.batch_size > 0 && split.train.size() >= static_cast<std::size_t>(opt.batch_size), Errc::Precondition,
          "training set smaller than one batch");
  require(arch.inputs == 6 && arch.outputs == static_cast<int>(kBandCount), Errc::Precondition,
          "network must map 6 features to the band count");
  NerefModel model;
  model.stats = fit_norm(split.train);
  model.params = make_mlp(arch, opt.seed);
  const auto [xt, yt] = normalized_batch(model.stats, split.train);
  const auto [xv, yv] = normalized_batch(model.stats, split.validation);
  const bool has_val = xv.cols() > 0;

  TrainReport rep;
  Adam adam(model.params);
  MlpParams best = model.params;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  double lr = opt.learning_rate;
  const auto n = static_cast<std::size_t>(xt.cols());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  Matrix bx(xt.rows(), opt.batch_size), by(yt.rows(), opt.batch_size);
  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    Rng rng = substream(opt.seed, "neref-epoch", static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double loss_sum = 0;
    for (std::size_t start = 0; start < n; start += opt.batch_size) {
      const auto m = static_cast<Eigen::Index>(std::min<std::size_t>(opt.batch_size, n - start));
      bx.resize(xt.rows(), m);
      by.resize(yt.rows(), m);
      for (Eigen::Index j = 0; j < m; ++j) {
        bx.col(j) = xt.col(order[start + static_cast<std::size_t>(j)]);
        by.col(j) = yt.col(order[start + static_cast<std::size_t>(j)]);
      }
      const auto g = mlp_gradient(model.params, bx, by);
      if (!std::isfinite(g.loss))
        fail(Errc::TrainingDiverged, "training loss is not finite at epoch " + std::to_string(epoch));
      loss_sum += g.loss * static_cast<double>(m);
      adam.step(model.params, g.gradient, lr);
    }
    rep.train_mse.push_back(loss_sum / static_cast<double>(n));
    const double val = has_val ? batch_mse(model.params, xv, yv) : rep.train_mse.back();
    if (!std::isfinite(val) || !model.params.finite())
      fail(Errc::TrainingDiverged, "validation loss is not finite at epoch " + std::to_string(epoch));
    rep.val_mse.push_back(val);
    rep.stopping_epoch = epoch;
    if (val < best_val) {
      best_val = val;
      best = model.params;
      rep.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= opt.patience) {
      break;
    }
    lr *= opt.lr_decay;
  }
  model.params = std::move(best);
  model.trained = true;

  if (!split.test.empty()) {
    const auto [xs, ys] = normalized_batch(model.stats, split.test);
    const Matrix pred = mlp_forward(model.params, xs);
    const auto score = score_predictions(pred, ys);
    rep.test_r2 = score.r2;
    rep.test_rmse = score.rmse;
    Matrix pred_dn(pred.rows(), pred.cols()), true_dn(pred.rows(), pred.cols());
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
      pred_dn.col(j) = model.stats.denormalize_output(pred.col(j));
      true_dn.col(j) = split.test[static_cast<std::size_t>(j)].dn;
    }
    rep.test_rmse_dn = score_predictions(pred_dn, true_dn).rmse;
  }
  return {std::move(model), rep};
}

/// Reference DN predicted for each feature: normalize, forward, denormalize,
/// clamp at zero.
inline std::vector<Spectrum> predict_reference_dn(const NerefModel& model,
                                                  const std::vector<LightFieldFeature>& features) {
  require(model.trained, Errc::ModelNotReady, "reference field has not been trained");
  std::vector<Spectrum> out(features.size());
  if (features.empty()) return out;
  Matrix x(6, static_cast<Eigen::Index>(features.size()));
  for (std::size_t i = 0; i < features.size(); ++i) {
    require(features[i].unit(1e-3), Errc::InvalidFeature, "feature vectors must be unit length");
    x.col(static_cast<Eigen::Index>(i)) = model.stats.normalize_input(feature_vector(features[i]));
  }
  const Matrix y = mlp_forward(model.params, x);
  for (std::size_t i = 0; i < features.size(); ++i)
    out[i] = model.stats.denormalize_output(y.col(static_cast<Eigen::Index>(i))).cwiseMax(0.0);
  return out;
}

inline void write_train_report_csv(std::ostream& os, const TrainReport& r) {
  os << "epoch,train_mse,val_mse\n" << std::setprecision(17);
  for (std::size_t e = 0; e < r.train_mse.size(); ++e) os << e + 1 << ',' << r.train_mse[e] << ',' << r.val_mse[e] << '\n';
}

namespace detail {

inline void put_hex(std::ostream& os, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  os << ' ' << buf;
}

inline void put_vector(std::ostream& os, const char* tag, const Vector& v) {
  os << tag << ' ' << v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) put_hex(os, v[i]);
  os << '\n';
}

inline double get_hex(std::istream& is) {
  std::string tok;
  require(static_cast<bool>(is >> tok), Errc::IoError, "truncated checkpoint");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  require(end && *end == '\0', Errc::IoError, "bad number '" + tok + "' in checkpoint");
  return v;
}

inline void expect_tag(std::istream& is, const std::string& tag) {
  std::string tok;
  require(static_cast<bool>(is >> tok) && tok == tag, Errc::IoError, "checkpoint: expected '" + tag + "'");
}

inline Vector get_vector(std::istream& is, const std::string& tag) {
  expect_tag(is, tag);
  Eigen::Index n = 0;
  require(static_cast<bool>(is >> n) && n >= 0, Errc::IoError, "checkpoint: bad length for " + tag);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = get_hex(is);
  return v;
}

}  // namespace detail

/// Text checkpoint with exact (hexadecimal) floating-point values: layer
/// sizes, activation, seed, normalization stats and all parameters.
inline void save_checkpoint(std::ostream& os, const NerefModel& m) {
  require(m.trained, Errc::ModelNotReady, "cannot save an untrained model");
  os << "plantscan-neref 1\n";
  os << "activation " << to_string(m.params.activation) << '\n';
  os << "seed " << m.params.seed << '\n';
  os << "layers " << m.params.layers() + 1 << ' ' << m.params.inputs();
  for (const auto& w : m.params.weights) os << ' ' << w.rows();
  os << '\n';
  detail::put_vector(os, "in_min", m.stats.in_min);
  detail::put_vector(os, "in_max", m.stats.in_max);
  detail::put_vector(os, "out_min", m.stats.out_min);
  detail::put_vector(os, "out_max", m.stats.out_max);
  for (std::size_t l = 0; l < m.params.layers(); ++l) {
    detail::put_vector(os, "W", Eigen::Map<const Vector>(m.params.weights[l].data(), m.params.weights[l].size()));
    detail::put_vector(os, "b", m.params.biases[l]);
  }
}

inline NerefModel load_checkpoint(std::istream& is) {
  detail::expect_tag(is, "plantscan-neref");
  int version = 0;
  require(static_cast<bool>(is >> version) && version == 1, Errc::IoError, "unsupported checkpoint version");
  NerefModel m;
  std::string act;
  detail::expect_tag(is, "activation");
  is >> act;
  m.params.activation = parse_activation(act);
  detail::expect_tag(is, "seed");
  is >> m.params.seed;
  detail::expect_tag(is, "layers");
  std::size_t count = 0;
  require(static_cast<bool>(is >> count) && count >= 2, Errc::IoError, "checkpoint: bad layer count");
  std::vector<Eigen::Index> sizes(count);
  for (auto& s : sizes) require(static_cast<bool>(is >> s) && s > 0, Errc::IoError, "checkpoint: bad layer size");
  m.stats.in_min = detail::get_vector(is, "in_min");
  m.stats.in_max = detail::get_vector(is, "in_max");
  m.stats.out_min = detail::get_vector(is, "out_min");
  m.stats.out_max = detail::get_vector(is, "out_max");
  for (std::size_t l = 0; l + 1 < count; ++l) {
    const Vector w = detail::get_vector(is, "W");
    require(w.size() == sizes[l] * sizes[l + 1], Errc::IoError, "checkpoint: weight shape mismatch");
    m.params.weights.push_back(Eigen::Map<const Matrix>(w.data(), sizes[l + 1], sizes[l]));
    const Vector b = detail::get_vector(is, "b");
    require(b.size() == sizes[l + 1], Errc::IoError, "checkpoint: bias shape mismatch");
    m.params.biases.push_back(b);
  }
  require(m.stats.in_min.size() == sizes.front() && m.stats.out_min.size() == sizes.back(), Errc::IoError,
          "checkpoint: normalization shape mismatch");
  m.trained = true;
  return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const NerefModel& m) {
  std::ofstream os(path);
  require(static_cast<bool>(os), Errc::IoError, "cannot write " + path.string());
  save_checkpoint(os, m);
}

inline NerefModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), Errc::IoError, "cannot read " + path.string());
  return load_checkpoint(is);
}

}  // namespace plantscan
