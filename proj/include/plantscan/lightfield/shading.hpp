#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/types.hpp>

#include <algorithm>
#include <cmath>

namespace plantscan {

/// Parallel light travelling along `direction` plus an isotropic diffuse
/// component, both per band in DN units.
struct LightField {
  Vec3 direction = Vec3(0, 0, -1);
  Spectrum parallel = Spectrum::Constant(200.0);
  Spectrum diffuse = Spectrum::Constant(20.0);

  void validate() const {
    require(std::abs(direction.norm() - 1.0) < 1e-9, Errc::Precondition, "light direction must be a unit vector");
    require((parallel.array() >= 0).all() && (diffuse.array() >= 0).all(), Errc::Precondition,
            "light intensities must be nonnegative");
  }
};

/// Halogen-like lab illumination: intensity rising slowly toward the NIR, with
/// the diffuse part at `diffuse_ratio` of the parallel part.
inline LightField default_light(double diffuse_ratio = 0.12) {
  LightField lf;
  for (std::size_t b = 0; b < kBandCount; ++b) {
    const double t = static_cast<double>(b) / (kBandCount - 1);
    lf.parallel[b] = 180.0 + 60.0 * t;
    lf.diffuse[b] = diffuse_ratio * lf.parallel[b];
  }
  return lf;
}

struct Material {
  Spectrum albedo = Spectrum::Constant(0.5);
  double k_s = 0.0;
  double shininess = 1.0;

  void validate() const {
    require((albedo.array() >= 0).all() && (albedo.array() <= 1).all(), Errc::Precondition,
            "albedo must lie in [0, 1]");
    require(k_s >= 0 && shininess >= 1, Errc::Precondition, "invalid specular parameters");
  }
};

/// Observation direction (surface toward camera) and surface normal.
struct LightFieldFeature {
  Vec3 v = Vec3::UnitZ();
  Vec3 n = Vec3::UnitZ();

  bool unit(double tol = 1e-6) const { return std::abs(v.norm() - 1) <= tol && std::abs(n.norm() - 1) <= tol; }
  Eigen::Matrix<double, 6, 1> vector() const {
    Eigen::Matrix<double, 6, 1> x;
    x << v, n;
    return x;
  }
};

namespace detail {

struct ShadeTerms {
  double cosine = 0;    // max(0, n . -l), zero when shadowed
  double specular = 0;  // max(0, r . v)^shininess, zero when shadowed or unlit
};

inline ShadeTerms shade_terms(const LightFieldFeature& f, const Material& m, const LightField& light, bool shadowed) {
  ShadeTerms t;
  if (shadowed) return t;
  const double c = f.n.dot(-light.direction);
  if (c <= 0) return t;
  t.cosine = c;
  if (m.k_s > 0) {
    const Vec3 r = light.direction - 2.0 * light.direction.dot(f.n) * f.n;
    t.specular = std::pow(std::max(0.0, r.dot(f.v)), m.shininess);
  }
  return t;
}

}  // namespace detail

/// DN = albedo (I_par cos + I_diff) + k_s I_par max(0, r.v)^shininess, where
/// r mirrors the light direction about n. A shadowed point keeps only the
/// diffuse term.
inline double shade_dn(const LightFieldFeature& f, const Material& m, const LightField& light, std::size_t band,
                       bool shadowed = false) {
  const auto t = detail::shade_terms(f, m, light, shadowed);
  return m.albedo[band] * (light.parallel[band] * t.cosine + light.diffuse[band]) +
         m.k_s * light.parallel[band] * t.specular;
}

inline Spectrum shade_spectrum(const LightFieldFeature& f, const Material& m, const LightField& light,
                               bool shadowed = false) {
  const auto t = detail::shade_terms(f, m, light, shadowed);
  return m.albedo.cwiseProduct(light.parallel * t.cosine + light.diffuse) + m.k_s * t.specular * light.parallel;
}

}  // namespace plantscan
