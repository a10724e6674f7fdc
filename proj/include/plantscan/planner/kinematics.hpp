#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/rng.hpp>
#include <plantscan/core/types.hpp>

#include <array>
#include <cmath>

namespace plantscan {

using JointConfig = Eigen::Matrix<double, 6, 1>;
using Jacobian = Eigen::Matrix<double, 6, 6>;

/// Standard Denavit-Hartenberg parameters of one revolute joint.
struct DhJoint {
  double a = 0;
  double d = 0;
  double alpha = 0;
  double theta_offset = 0;
};

struct KinematicChain {
  std::array<DhJoint, 6> joints{};
  Pose base;  // world_from_base

  /// Upper bound on the distance from the base origin to the flange.
  double reach_bound() const {
    double r = 0;
    for (const auto& j : joints) r += std::abs(j.a) + std::abs(j.d);
    return r;
  }
};

/// Generic 6R industrial arm with about 0.85 m reach.
inline KinematicChain default_arm(const Pose& base = {}) {
  KinematicChain c;
  c.joints = {DhJoint{0.0, 0.089159, kPi / 2, 0}, DhJoint{-0.425, 0.0, 0.0, 0},     DhJoint{-0.39225, 0.0, 0.0, 0},
              DhJoint{0.0, 0.10915, kPi / 2, 0},  DhJoint{0.0, 0.09465, -kPi / 2, 0}, DhJoint{0.0, 0.0823, 0.0, 0}};
  c.base = base;
  return c;
}

/// Camera pose in the tool (flange) frame, from hand-eye calibration.
inline Pose default_hand_eye() {
  Mat4 m;
  m << 0, 0.99955, 0.029996, -0.03459,  //
      0, -0.03, 0.99955, 0.065924,      //
      1, 0, 0, 0.12,                    //
      0, 0, 0, 1;
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

/// Checks that `p` is a rigid transform, up to `tol` on RᵀR and det R.
inline void validate_rigid(const Pose& p, double tol = 1e-4) {
  require(p.rotation.allFinite() && p.translation.allFinite(), Errc::InvalidTransform, "non-finite transform");
  require((p.rotation.transpose() * p.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
              std::abs(p.rotation.determinant() - 1.0) <= tol,
          Errc::InvalidTransform, "rotation is not orthonormal and right-handed");
}

inline double wrap_angle(double a) {
  double w = std::fmod(a, kTwoPi);
  if (w < 0) w += kTwoPi;
  return w >= kTwoPi ? 0.0 : w;
}

inline JointConfig wrap_joints(const JointConfig& q) {
  JointConfig w;
  for (int i = 0; i < 6; ++i) w[i] = wrap_angle(q[i]);
  return w;
}

inline Pose dh_transform(const DhJoint& j, double q) {
  const double th = q + j.theta_offset;
  const double ct = std::cos(th), st = std::sin(th), ca = std::cos(j.alpha), sa = std::sin(j.alpha);
  Pose t;
  t.rotation << ct, -st * ca, st * sa,  //
      st, ct * ca, -ct * sa,            //
      0, sa, ca;
  t.translation = Vec3(j.a * ct, j.a * st, j.d);
  return t;
}

/// World poses of the base frame and the six joint frames; element 6 is the flange.
inline std::array<Pose, 7> joint_frames(const KinematicChain& chain, const JointConfig& q) {
  std::array<Pose, 7> f;
  f[0] = chain.base;
  for (int i = 0; i < 6; ++i) f[i + 1] = f[i] * dh_transform(chain.joints[i], q[i]);
  return f;
}

/// Flange pose in world coordinates.
inline Pose forward_kinematics(const KinematicChain& chain, const JointConfig& q) { return joint_frames(chain, q)[6]; }

/// Geometric Jacobian of the flange (linear rows first), world frame.
inline Jacobian geometric_jacobian(const std::array<Pose, 7>& f) {
  Jacobian j;
  const Vec3 pe = f[6].translation;
  for (int i = 0; i < 6; ++i) {
    const Vec3 z = f[i].rotation.col(2);
    j.block<3, 1>(0, i) = z.cross(pe - f[i].translation);
    j.block<3, 1>(3, i) = z;
  }
  return j;
}

/// Position and rotation-vector error taking `current` to `target`.
inline Eigen::Matrix<double, 6, 1> pose_error(const Pose& current, const Pose& target) {
  Eigen::Matrix<double, 6, 1> e;
  e.head<3>() = target.translation - current.translation;
  const Eigen::AngleAxisd aa(Mat3(target.rotation * current.rotation.transpose()));
  e.tail<3>() = aa.angle() * aa.axis();
  return e;
}

struct IkParams {
  int max_iterations = 200;
  int restarts = 30;
  double damping = 0.02;
  double max_step = 0.5;  // rad per iteration
  double position_tol = 1e-4;
  double angle_tol = deg2rad(0.1);
  std::uint64_t seed = 0;
};

namespace detail {

inline bool ik_converged(const Eigen::Matrix<double, 6, 1>& e, const IkParams& p) {
  return e.head<3>().norm() <= p.position_tol && e.tail<3>().norm() <= p.angle_tol;
}

// Damped least squares from q; returns true with q at a solution.
inline bool dls_solve(const KinematicChain& chain, const Pose& target, JointConfig& q, const IkParams& p) {
  for (int it = 0; it < p.max_iterations; ++it) {
    const auto f = joint_frames(chain, q);
    const auto e = pose_error(f[6], target);
    // Converge well below tolerance so the result is stable after wrapping.
    if (e.head<3>().norm() <= 0.01 * p.position_tol && e.tail<3>().norm() <= 0.01 * p.angle_tol) return true;
    const Jacobian j = geometric_jacobian(f);
    const Jacobian jjt = j * j.transpose() + p.damping * p.damping * Jacobian::Identity();
    JointConfig dq = j.transpose() * jjt.ldlt().solve(e);
    const double n = dq.cwiseAbs().maxCoeff();
    if (n > p.max_step) dq *= p.max_step / n;
    q += dq;
  }
  return ik_converged(pose_error(forward_kinematics(chain, q), target), p);
}

}  // namespace detail

/// Joint angles reaching `target` (flange pose) within the position and angle
/// tolerances, by damped least squares from `q0` and then from random
/// restarts. Angles are wrapped to [0, 2π).
inline JointConfig inverse_kinematics(const KinematicChain& chain, const Pose& target, const JointConfig& q0,
                                      const IkParams& p = {}) {
  require(target.rotation.allFinite() && target.translation.allFinite(), Errc::Precondition, "non-finite IK target");
  const Vec3 shoulder = chain.base.apply(Vec3(0, 0, chain.joints[0].d));
  if ((target.translation - shoulder).norm() > chain.reach_bound()) fail(Errc::Unreachable, "IK target out of reach");

  if (detail::ik_converged(pose_error(forward_kinematics(chain, q0), target), p)) return wrap_joints(q0);
  Rng rng = substream(p.seed, "ik");
  JointConfig q = q0;
  for (int attempt = 0; attempt <= p.restarts; ++attempt) {
    if (attempt > 0)
      for (int i = 0; i < 6; ++i) q[i] = uniform(rng, 0.0, kTwoPi);
    if (detail::dls_solve(chain, target, q, p)) {
      const JointConfig w = wrap_joints(q);
      if (detail::ik_converged(pose_error(forward_kinematics(chain, w), target), p)) return w;
    }
  }
  fail(Errc::Unreachable, "IK did not converge");
}

}  // namespace plantscan
