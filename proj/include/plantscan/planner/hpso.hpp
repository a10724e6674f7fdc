#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/core/rng.hpp>
#include <plantscan/planner/kinematics.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace plantscan {

struct Tour {
  std::vector<std::size_t> order;
  double fitness = 0;  // radians
};

/// Sum over consecutive stops of the Euclidean joint-space distance, using
/// raw angle differences.
inline double tour_fitness(std::span<const std::size_t> order, std::span<const JointConfig> configs) {
  double f = 0;
  for (std::size_t n = 0; n + 1 < order.size(); ++n) f += (configs[order[n]] - configs[order[n + 1]]).norm();
  return f;
}

struct HpsoParams {
  int swarm = 50;
  int iterations = 5000;
  double mutation_rate = 0.1;
  double initial_temperature_ratio = 0.1;  // T0 = ratio × initial best fitness
  double cooling = 0.995;                  // T ← cooling × T per iteration
  std::uint64_t seed = 0;
};

struct HpsoResult {
  Tour best;
  std::vector<double> trace;  // global best fitness; [0] is the initial swarm best
};

namespace detail {

// Order crossover: keeps a random slice of `guide` in place and fills the
// other positions with the remaining indices in the order they occur in `base`.
inline std::vector<std::size_t> order_crossover(const std::vector<std::size_t>& base,
                                                const std::vector<std::size_t>& guide, Rng& rng) {
  const std::size_t n = base.size();
  std::size_t i = uniform_index(rng, n), j = uniform_index(rng, n);
  if (i > j) std::swap(i, j);
  std::vector<std::size_t> child(n);
  std::vector<char> used(n, 0);
  for (std::size_t k = i; k <= j; ++k) {
    child[k] = guide[k];
    used[guide[k]] = 1;
  }
  std::size_t pos = (j + 1) % n;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t v = base[(j + 1 + k) % n];
    if (used[v]) continue;
    child[pos] = v;
    pos = (pos + 1) % n;
  }
  return child;
}

inline void reverse_segment(std::vector<std::size_t>& t, Rng& rng) {
  std::size_t i = uniform_index(rng, t.size()), j = uniform_index(rng, t.size());
  if (i > j) std::swap(i, j);
  std::reverse(t.begin() + static_cast<long>(i), t.begin() + static_cast<long>(j) + 1);
}

}  // namespace detail

/// Viewpoint ordering by hybrid particle swarm: each particle is a
/// permutation that is crossed with its personal best and then with the
/// global best, mutated by segment reversal, and moved to the result under a
/// simulated-annealing acceptance rule with geometric cooling.
inline HpsoResult hpso_sort(std::span<const JointConfig> configs, const HpsoParams& p = {}) {
  require(!configs.empty(), Errc::EmptyInput, "HPSO needs at least one configuration");
  require(p.swarm >= 1 && p.iterations >= 0, Errc::Precondition, "bad HPSO swarm or iteration count");
  const std::size_t n = configs.size();
  Rng rng = substream(p.seed, "hpso");
  HpsoResult out;
  if (n <= 2) {
    out.best.order.resize(n);
    std::iota(out.best.order.begin(), out.best.order.end(), 0);
    out.best.fitness = tour_fitness(out.best.order, configs);
    out.trace.assign(1, out.best.fitness);
    return out;
  }

  struct Particle {
    std::vector<std::size_t> x, pbest;
    double fx = 0, fpbest = 0;
  };
  std::vector<Particle> swarm(static_cast<std::size_t>(p.swarm));
  std::size_t g = 0;
  for (std::size_t s = 0; s < swarm.size(); ++s) {
    auto& pt = swarm[s];
    pt.x.resize(n);
    std::iota(pt.x.begin(), pt.x.end(), 0);
    std::shuffle(pt.x.begin(), pt.x.end(), rng);
    pt.fx = tour_fitness(pt.x, configs);
    pt.pbest = pt.x;
    pt.fpbest = pt.fx;
    if (pt.fx < swarm[g].fx) g = s;
  }
  out.best = {swarm[g].x, swarm[g].fx};
  out.trace.reserve(static_cast<std::size_t>(p.iterations) + 1);
  out.trace.push_back(out.best.fitness);

  double temperature = p.initial_temperature_ratio * out.best.fitness;
  for (int it = 0; it < p.iterations; ++it) {
    for (auto& pt : swarm) {
      auto y = detail::order_crossover(pt.x, pt.pbest, rng);
      y = detail::order_crossover(y, out.best.order, rng);
      if (uniform(rng, 0.0, 1.0) < p.mutation_rate) detail::reverse_segment(y, rng);
      const double fy = tour_fitness(y, configs);
      const double delta = fy - pt.fx;
      const bool accept =
          delta <= 0 || (temperature > 0 && uniform(rng, 0.0, 1.0) < std::exp(-delta / temperature));
      if (accept) {
        pt.x = std::move(y);
        pt.fx = fy;
      }
      if (pt.fx < pt.fpbest) {
        pt.pbest = pt.x;
        pt.fpbest = pt.fx;
      }
      if (pt.fx < out.best.fitness) out.best = {pt.x, pt.fx};
    }
    temperature *= p.cooling;
    out.trace.push_back(out.best.fitness);
  }
  return out;
}

}  // namespace plantscan
