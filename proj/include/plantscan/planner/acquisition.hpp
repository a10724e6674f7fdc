#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/log.hpp>
#include <plantscan/nbv/viewpoint.hpp>
#include <plantscan/planner/hpso.hpp>
#include <plantscan/planner/kinematics.hpp>
#include <plantscan/planner/octomap.hpp>
#include <plantscan/planner/rrt.hpp>

#include <iomanip>
#include <ostream>
#include <vector>

namespace plantscan {

struct AcquisitionParams {
  Pose hand_eye = default_hand_eye();  // camera in flange frame
  JointConfig home = (JointConfig() << 0.0, 4.4, 1.6, 4.2, 1.57, 0.0).finished();
  IkParams ik;
  int ik_attempts = 4;  // distinct IK seeds tried for a collision-free solution
  HpsoParams hpso;
  RrtParams rrt;
};

struct PlannedLeg {
  std::size_t from = 0;  // positions in the tour
  std::size_t to = 0;
  ArmPath path;
  bool timed_out = false;
};

struct AcquisitionPlan {
  std::vector<Viewpoint> stops;  // reachable viewpoints in tour order
  std::vector<JointConfig> configs;  // joint configuration per stop
  Tour tour;                         // over the reachable set, before reordering
  std::vector<double> fitness_trace;
  std::vector<PlannedLeg> legs;
  std::vector<int> dropped;  // viewpoint ids
  double total_travel = 0;   // joint-space length of all planned legs, rad
};

/// Flange pose that puts the camera at viewpoint `v`.
inline Pose flange_target(const Viewpoint& v, const Pose& hand_eye) { return v.pose() * hand_eye.inverse(); }

/// Collision-free IK solution for viewpoint `v`, or Unreachable.
inline JointConfig viewpoint_ik(const Viewpoint& v, const KinematicChain& chain, const ArmCollisionChecker& checker,
                                const AcquisitionParams& p) {
  const Pose target = flange_target(v, p.hand_eye);
  Rng rng = substream(p.ik.seed, "viewpoint-ik", static_cast<std::uint64_t>(v.id));
  JointConfig q0 = p.home;
  for (int attempt = 0; attempt < p.ik_attempts; ++attempt) {
    IkParams ik = p.ik;
    ik.seed = splitmix64(p.ik.seed + static_cast<std::uint64_t>(attempt));
    if (attempt > 0)
      for (int j = 0; j < 6; ++j) q0[j] = uniform(rng, 0.0, kTwoPi);
    try {
      const JointConfig q = inverse_kinematics(chain, target, q0, ik);
      if (checker.config_free(q)) return q;
    } catch (const Error& e) {
      if (e.code() != Errc::Unreachable || attempt + 1 == p.ik_attempts) throw;
    }
  }
  fail(Errc::Unreachable, "no collision-free IK solution");
}

/// IK for every viewpoint (unreachable ones dropped), HPSO ordering of the
/// rest, and an RRT path for each consecutive pair. Legs that exceed the RRT
/// budget are reported, not fatal.
inline AcquisitionPlan plan_acquisition(const std::vector<Viewpoint>& viewpoints, const KinematicChain& chain,
                                        const OccupancyGrid& grid, const AcquisitionParams& p = {}) {
  validate_rigid(p.hand_eye);
  const ArmCollisionChecker checker(chain, grid, p.hand_eye);
  AcquisitionPlan plan;
  std::vector<Viewpoint> reachable;
  std::vector<JointConfig> configs;
  for (const auto& v : viewpoints) {
    try {
      configs.push_back(viewpoint_ik(v, chain, checker, p));
      reachable.push_back(v);
    } catch (const Error& e) {
      if (e.code() != Errc::Unreachable) throw;
      plan.dropped.push_back(v.id);
    }
  }
  if (reachable.empty()) return plan;

  const auto sorted = hpso_sort(configs, p.hpso);
  plan.tour = sorted.best;
  plan.fitness_trace = sorted.trace;
  for (std::size_t k : plan.tour.order) {
    plan.stops.push_back(reachable[k]);
    plan.configs.push_back(configs[k]);
  }
  for (std::size_t k = 0; k + 1 < plan.configs.size(); ++k) {
    PlannedLeg leg{k, k + 1, {}, false};
    RrtParams rrt = p.rrt;
    rrt.seed = p.rrt.seed ^ splitmix64(k + 1);
    try {
      leg.path = rrt_plan(plan.configs[k], plan.configs[k + 1], checker, rrt);
      plan.total_travel += path_length(leg.path);
    } catch (const Error& e) {
      if (e.code() != Errc::PlanningTimeout) throw;
      leg.timed_out = true;
      log_warn("leg " + std::to_string(k) + " timed out");
    }
    plan.legs.push_back(std::move(leg));
  }
  return plan;
}

/// One row per waypoint: leg index, waypoint index, six joint angles.
inline void write_paths_csv(std::ostream& os, const AcquisitionPlan& plan) {
  os << "leg,waypoint,q1,q2,q3,q4,q5,q6\n" << std::setprecision(17);
  for (std::size_t l = 0; l < plan.legs.size(); ++l)
    for (std::size_t w = 0; w < plan.legs[l].path.size(); ++w) {
      os << l << ',' << w;
      for (int j = 0; j < 6; ++j) os << ',' << plan.legs[l].path[w][j];
      os << '\n';
    }
}

/// One row per stop: tour position, viewpoint id, kind, six joint angles.
inline void write_tour_csv(std::ostream& os, const AcquisitionPlan& plan) {
  os << "position,viewpoint_id,kind,q1,q2,q3,q4,q5,q6\n" << std::setprecision(17);
  for (std::size_t k = 0; k < plan.stops.size(); ++k) {
    os << k << ',' << plan.stops[k].id << ',' << to_string(plan.stops[k].kind);
    for (int j = 0; j < 6; ++j) os << ',' << plan.configs[k][j];
    os << '\n';
  }
}

}  // namespace plantscan
