#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "certrl/env.hpp"
#include "certrl/model.hpp"
#include "certrl/rng.hpp"

namespace certrl {

enum class AttackKind { random, grid_corner, gradient_mad };

AttackKind attack_kind_from_string(const std::string& name);
std::string to_string(AttackKind kind);

// Observation attack nu(s). Every emitted perturbation is clamped into the
// l-inf ball B(s, epsilon), and epsilon = 0 returns s without touching the
// stream, so a zero-budget attack is exactly the nominal rollout.
struct AttackConfig {
  AttackKind kind = AttackKind::gradient_mad;
  double epsilon = 0.0;
  // gradient_mad ascent iterations and per-iteration step; step_size 0
  // selects 2.5 * epsilon / steps.
  int steps = 10;
  double step_size = 0.0;

  void validate() const;
};

// env supplies the one-step reward lookahead of grid_corner; the other kinds
// never touch it and accept null.
Eigen::VectorXd attack_state(const GaussianPolicy& policy, const Mdp* env,
                             const Eigen::VectorXd& s, const AttackConfig& cfg,
                             RngStream& rng);

struct AttackResult {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> returns;
};

// Rolls the policy out in the true environment under per-step attacked
// observations: actions come from the perturbed state, transitions and
// rewards from the real one, which the attack never changes. Episodes run on
// derived per-episode streams, so results do not depend on threads, and a
// non-finite state ends its episode.
AttackResult attacked_return(const GaussianPolicy& policy, const Mdp& env,
                             const AttackConfig& cfg, int episodes,
                             std::uint64_t seed, int threads = 1);

}  // namespace certrl
