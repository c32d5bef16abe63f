#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "certrl/env.hpp"
#include "certrl/mlp.hpp"
#include "certrl/model.hpp"
#include "certrl/rng.hpp"

namespace certrl {

// Perturbation radius ramp: a degree-`temperature` power curve from 1e-12,
// joined with matching slope to a straight line that reaches eps_target at
// end_step, constant afterwards. A zero eps_target pins the whole schedule
// to zero, which turns the robustness term off for baseline runs.
struct EpsilonSchedule {
  double eps_target = 0.1;
  int end_step = 30;       // step at which eps reaches eps_target
  int final_step = 40;     // total steps the schedule is meant to cover
  double temperature = 4.0;

  void validate() const;
  double at(int step) const;
};

struct TrainConfig {
  int epochs = 40;
  int init_env_episodes = 5;  // warm-up episodes under the untrained policy
  int env_episodes = 1;       // real-environment episodes added per epoch
  int env_horizon = 0;        // steps per episode; 0 means the env's horizon
  int model_rollouts = 16;    // trajectories unrolled in the model per epoch
  int model_horizon = 5;      // their length, and the lookahead of the
                              // nominal loss
  int grad_steps = 8;         // policy updates per epoch
  int t_train = 1;            // robustness-loss horizon
  int normal_batch = 8;       // start states per nominal-loss estimate
  int eval_episodes = 4;      // deterministic episodes for the reward log

  double delta = 0.05;       // robustness threshold the multiplier enforces
  double lambda0 = 0.3;      // initial Lagrange multiplier
  double alpha = 3e-3;       // primal (policy) step size
  double alpha_dual = 1e-2;  // dual (multiplier) step size

  EpsilonSchedule schedule;

  std::vector<int> policy_hidden = {16};
  double policy_init_sigma = 0.1;

  std::vector<int> model_hidden = {32, 32};
  int model_fit_epochs = 20;  // passes over the real data per outer epoch
  int model_batch = 64;
  double model_lr = 1e-3;
  double model_init_sigma = 0.3;
  double delta_e = 0.1;  // miss probability for the held-out error estimate

  void validate() const;
};

// Gradient of every trainable policy parameter: the mean network plus the
// exploration log-sigmas.
struct PolicyGradient {
  ParamGradient net;
  Eigen::VectorXd log_sigma;

  static PolicyGradient zeros_like(const GaussianPolicy& policy);
  PolicyGradient& operator+=(const PolicyGradient& other);
  void scale(double k);
};

// One row of the training log; column order matches log_csv.
struct EpochLog {
  int epoch = 0;
  long env_steps = 0;
  double nominal_reward = 0.0;
  double symbolic_loss = 0.0;
  double lambda = 0.0;
  double epsilon_t = 0.0;
};

struct TrainResult {
  GaussianPolicy policy;
  GaussianModel model;
  std::vector<EpochLog> log;
  long symbolic_skipped = 0;  // robustness-loss samples dropped on explosion
};

// Negative mean return of `horizon`-step rollouts through the model mean
// from the given start states, with reparameterized action noise so the
// exploration scale receives exact gradients. The model is held fixed.
std::pair<double, PolicyGradient> normal_loss(
    const GaussianPolicy& policy, const GaussianModel& model,
    const std::vector<Eigen::VectorXd>& starts, int horizon, RngStream& rng);

struct SymbolicLoss {
  double loss = 0.0;
  PolicyGradient grad;
  bool exploded = false;  // interval blow-up; loss is +inf and grad is zero
};

// Gap between the nominal return R_o of a concrete rollout and the certified
// floor R_min of the matching abstract rollout, sharing one noise draw; both
// passes run through the model, and the gradient flows through the interval
// arithmetic exactly. Always nonnegative: the concrete trajectory is one of
// the points the interval covers. Noise enters both passes as constants.
SymbolicLoss symbolic_loss(const GaussianPolicy& policy,
                           const GaussianModel& model,
                           const Eigen::VectorXd& s0,
                           const PerturbationSpec& spec, int t_train,
                           RngStream& rng);

// Constrained policy optimization in the style of Dyna: per epoch, refit the
// model on real transitions, roll synthetic data, and take primal-dual steps
// on  L_normal + lambda (L_symbolic - delta)  with the multiplier clamped at
// zero. Identical seeds give identical logs and parameters. Throws
// runtime_error with the epoch in the message if parameters go non-finite.
TrainResult train(const Mdp& env, const TrainConfig& cfg, std::uint64_t seed);

std::string log_csv(const std::vector<EpochLog>& log);
void save_log_csv(const std::vector<EpochLog>& log, const std::string& path);

}  // namespace certrl
