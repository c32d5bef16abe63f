#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "certrl/box.hpp"
#include "certrl/env.hpp"
#include "certrl/model.hpp"
#include "certrl/rng.hpp"

namespace certrl {

// Any interval endpoint beyond this magnitude (or non-finite) marks the
// rollout "not certifiable"; its lower bound is reported as NaN.
inline constexpr double kBoundExplosionLimit = 1e12;

bool interval_exploded(const Box& b);

struct TraceStep {
  Box s_original;  // abstract true state entering this step
  Box s_obs;       // after adversary widening by epsilon
  Box action;
  Box reward;                 // 1-dim
  Eigen::VectorXd noise_pi;   // policy noise draw (zero when deterministic)
  Eigen::VectorXd noise_env;  // model noise draw, state block then reward
};

struct TraceMeta {
  std::string reward_mode;  // "exact" or "learned"
  double epsilon = 0.0;
  double eps_e = 0.0;
  double delta_e = 0.0;
  int horizon = 0;
  int state_dim = 0;
  int action_dim = 0;
  std::uint64_t policy_hash = 0;
  std::uint64_t dynamics_hash = 0;
  std::uint64_t seed = 0;
  std::uint64_t sample_index = 0;
};

// The certificate: one worst-case abstract rollout with its noise record.
// Replaying the recorded noise through the same policy/model reproduces
// every box bit-exactly on the producing platform.
struct AbstractTrace {
  TraceMeta meta;
  Eigen::VectorXd s0;
  std::vector<TraceStep> steps;
  Box total_reward;  // interval sum of all step rewards
  bool certifiable = true;
  int failed_step = -1;  // step index at which bounds exploded, if any

  // inf of the accumulated reward interval; NaN when not certifiable.
  double lower_bound() const;
};

// Per-step noise draws for a rollout: pi[i] has action dims, env[i] has
// state dims + 1 (reward last).
struct NoiseRecord {
  std::vector<Eigen::VectorXd> pi;
  std::vector<Eigen::VectorXd> env;

  static NoiseRecord zeros(int T, int action_dim, int state_dim);
  static NoiseRecord from_trace(const AbstractTrace& trace);
};

// Worst-case abstract rollout: at every step the observed state is the
// epsilon-widened true state, the action box is the policy image of it plus
// the policy noise point, and the model image plus model noise is widened by
// eps_e on the state block. Rewards accumulate as an interval sum.
AbstractTrace abstract_rollout(const GaussianPolicy& policy,
                               const AbstractDynamics& dyn,
                               const Eigen::VectorXd& s0,
                               const PerturbationSpec& spec, int T,
                               const NoiseRecord& noise);
// Sampling form: policy noise from the policy's own sigma (zero when
// deterministic_eval), model noise from the dynamics' sigma.
AbstractTrace abstract_rollout(const GaussianPolicy& policy,
                               const AbstractDynamics& dyn,
                               const Eigen::VectorXd& s0,
                               const PerturbationSpec& spec, int T,
                               RngStream& rng);

struct CertConfig {
  int num_samples = 100;  // independent rollouts averaged by the estimator
  int horizon = 10;
  double delta = 0.05;  // confidence for the certified bound
  int threads = 1;      // outer samples are independent; results identical
                        // for any thread count

  void validate() const;
};

struct WcarResult {
  // Mean of per-sample lower bounds; NaN if any sample was not certifiable.
  double wcar = 0.0;
  // Unbiased sample variance of the lower bounds.
  double variance = 0.0;
  std::vector<double> lower_bounds;
  int num_not_certifiable = 0;
  std::vector<AbstractTrace> traces;
};

// Estimates the worst-case accumulative reward: N abstract rollouts from
// sampled initial states, each on an independent stream derived from (seed,
// sample index), so results do not depend on the thread count.
WcarResult wcar(const GaussianPolicy& policy, const AbstractDynamics& dyn,
                const std::function<Eigen::VectorXd(RngStream&)>& init_sampler,
                const PerturbationSpec& spec, const CertConfig& cfg,
                std::uint64_t seed);

// High-probability lower bound on the true reward under the optimal
// adversary: the estimate minus a Chebyshev sampling term minus a
// model-error term that compounds over the horizon through the Lipschitz
// constants. Near L_E * L_pi = 1 the closed form is evaluated by series.
double theorem1_bound(double wcar_mean, double wcar_variance, int num_samples,
                      double delta, double delta_e, int horizon,
                      double lip_dynamics, double lip_policy,
                      double lip_reward, double d_e);

// The horizon-compounding factor ((x^T + (1-x)T - 1) / (1-x)^2) of the
// model-error term, exposed for direct numerical checks.
double horizon_error_factor(double x, int T);

// Replays the trace's recorded noise through the given policy/dynamics and
// checks the stored certificate: metadata must match the artifacts, every
// stored box must contain the recomputed one, the accumulated reward must be
// consistent with the per-step rewards, and a certifiable trace must replay
// to the same bounds. On failure, *why (if given) names the first mismatch.
bool verify_certificate(const AbstractTrace& trace,
                        const GaussianPolicy& policy,
                        const AbstractDynamics& dyn,
                        std::string* why = nullptr);

// Text serialization of one certificate, ending in a content-hash line over
// all preceding bytes. load_trace rejects files whose hash does not match.
std::string serialize_trace(const AbstractTrace& trace);
AbstractTrace parse_trace(const std::string& text);
void save_trace(const AbstractTrace& trace, const std::string& path);
AbstractTrace load_trace(const std::string& path);

}  // namespace certrl
