#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/rng.hpp>

#include <Eigen/Core>

#include <cmath>
#include <string_view>
#include <vector>

namespace plantscan {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { Tanh, Sigmoid };

inline std::string_view to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "sigmoid"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  fail(Errc::ConfigError, "unknown activation '" + std::string(s) + "'");
}

struct MlpArch {
  int inputs = 6;
  int hidden_layers = 8;
  int width = 128;
  int outputs = 25;
  Activation activation = Activation::Tanh;

  std::vector<int> sizes() const {
    std::vector<int> s{inputs};
    for (int i = 0; i < hidden_layers; ++i) s.push_back(width);
    s.push_back(outputs);
    return s;
  }
};

/// Fully connected network: hidden layers use `activation`, the output layer
/// is linear. weights[l] maps layer l (columns) to layer l+1 (rows).
struct MlpParams {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Activation activation = Activation::Tanh;
  std::uint64_t seed = 0;

  std::size_t layers() const { return weights.size(); }
  int inputs() const { return static_cast<int>(weights.front().cols()); }
  int outputs() const { return static_cast<int>(weights.back().rows()); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layers(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }
  /// Flat parameter access: per layer, weights (column-major) then biases.
  double& parameter(std::size_t idx) {
    for (std::size_t l = 0; l < layers(); ++l) {
      if (idx < static_cast<std::size_t>(weights[l].size())) return weights[l].data()[idx];
      idx -= weights[l].size();
      if (idx < static_cast<std::size_t>(biases[l].size())) return biases[l][static_cast<Eigen::Index>(idx)];
      idx -= biases[l].size();
    }
    fail(Errc::Precondition, "parameter index out of range");
  }
  bool finite() const {
    for (std::size_t l = 0; l < layers(); ++l)
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    return true;
  }
  /// Same shapes, all zero.
  MlpParams zeros_like() const {
    MlpParams z = *this;
    for (auto& w : z.weights) w.setZero();
    for (auto& b : z.biases) b.setZero();
    return z;
  }
};

/// Glorot-uniform weights, zero biases.
inline MlpParams make_mlp(const MlpArch& arch, std::uint64_t seed) {
  require(arch.inputs > 0 && arch.outputs > 0 && arch.hidden_layers >= 0 && arch.width > 0, Errc::Precondition,
          "invalid network shape");
  const auto s = arch.sizes();
  MlpParams p;
  p.activation = arch.activation;
  p.seed = seed;
  Rng rng = substream(seed, "mlp-init");
  for (std::size_t l = 0; l + 1 < s.size(); ++l) {
    const double limit = std::sqrt(6.0 / (s[l] + s[l + 1]));
    Matrix w(s[l + 1], s[l]);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = uniform(rng, -limit, limit);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(s[l + 1]));
  }
  return p;
}

namespace detail {

inline void activate(Matrix& z, Activation a) {
  if (a == Activation::Tanh)
    z = z.array().tanh().matrix();
  else
    z = (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

/// Derivative of the activation expressed through its output.
inline Matrix activation_slope(const Matrix& out, Activation a) {
  if (a == Activation::Tanh) return (1.0 - out.array().square()).matrix();
  return (out.array() * (1.0 - out.array())).matrix();
}

}  // namespace detail

/// Forward pass for a batch stored one sample per column.
inline Matrix mlp_forward(const MlpParams& p, const Matrix& x) {
  Matrix a = x;
  for (std::size_t l = 0; l < p.layers(); ++l) {
    Matrix z = p.weights[l] * a;
    z.colwise() += p.biases[l];
    if (l + 1 < p.layers()) detail::activate(z, p.activation);
    a = std::move(z);
  }
  return a;
}

inline Vector mlp_forward(const MlpParams& p, const Vector& x) { return mlp_forward(p, Matrix(x)).col(0); }

struct GradientResult {
  MlpParams gradient;  // same shapes as the parameters
  double loss = 0;
};

/// Mean squared error over all outputs of the batch and its exact gradient by
/// backpropagation. Columns of `x` and `target` are samples.
inline GradientResult mlp_gradient(const MlpParams& p, const Matrix& x, const Matrix& target) {
  require(x.cols() > 0 && x.cols() == target.cols(), Errc::Precondition, "gradient needs a nonempty matched batch");
  const std::size_t L = p.layers();
  std::vector<Matrix> acts(L + 1);
  acts[0] = x;
  for (std::size_t l = 0; l < L; ++l) {
    Matrix z = p.weights[l] * acts[l];
    z.colwise() += p.biases[l];
    if (l + 1 < L) detail::activate(z, p.activation);
    acts[l + 1] = std::move(z);
  }
  const Matrix diff = acts[L] - target;
  const double scale = 1.0 / static_cast<double>(diff.size());
  GradientResult r{p.zeros_like(), diff.squaredNorm() * scale};
  Matrix delta = 2.0 * scale * diff;
  for (std::size_t l = L; l-- > 0;) {
    r.gradient.weights[l].noalias() = delta * acts[l].transpose();
    r.gradient.biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    Matrix back = p.weights[l].transpose() * delta;
    delta = back.cwiseProduct(detail::activation_slope(acts[l], p.activation));
  }
  return r;
}

/// Adam with bias correction; the step size is supplied per call so callers
/// can schedule it.
class Adam {
 public:
  explicit Adam(const MlpParams& shape, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(shape.zeros_like()), v_(shape.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(MlpParams& p, const MlpParams& g, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_), c2 = 1.0 - std::pow(beta2_, t_);
    auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
      m = beta1_ * m + (1 - beta1_) * grad;
      v = beta2_ * v + (1 - beta2_) * grad.cwiseProduct(grad);
      param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    };
    for (std::size_t l = 0; l < p.layers(); ++l) {
      update(p.weights[l], m_.weights[l], v_.weights[l], g.weights[l]);
      update(p.biases[l], m_.biases[l], v_.biases[l], g.biases[l]);
    }
  }

 private:
  MlpParams m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

}  // namespace plantscan
