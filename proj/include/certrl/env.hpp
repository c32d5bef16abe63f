#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "certrl/box.hpp"
#include "certrl/rng.hpp"

namespace certrl {

// l-inf observation perturbation ball B(s) = { s' : ||s' - s||_inf <= eps }.
// The unperturbed state always lies in its own ball.
struct PerturbationSpec {
  double epsilon = 0.0;

  explicit PerturbationSpec(double eps = 0.0) : epsilon(eps) {
    if (!(eps >= 0.0))
      throw std::invalid_argument("PerturbationSpec: epsilon must be >= 0");
  }

  bool contains(const Eigen::VectorXd& s, const Eigen::VectorXd& s_obs,
                double tol = 0.0) const {
    return (s_obs - s).lpNorm<Eigen::Infinity>() <= epsilon + tol;
  }
};

// White-box MDP with separable Gaussian transition noise:
//   s' = mean_dynamics(s, a) + noise_std .* e,  e ~ N(0, I).
// Rewards are deterministic in (s, a) and evaluable on boxes through the
// paired *_abs functions, which are built from the same transfer ops the
// certifier uses. Action clipping, when an environment has it, lives inside
// the dynamics/reward functions of both forms so the two can never disagree.
struct Mdp {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  int horizon = 0;

  // Analytic Lipschitz constants (l-inf, joint (s, a) max-metric) of the mean
  // dynamics and the reward; inputs to the certified-bound evaluator when the
  // environment stands in as its own dynamics model.
  double dynamics_lipschitz = 0.0;
  double reward_lipschitz = 0.0;

  std::function<Eigen::VectorXd(RngStream&)> init_sampler;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>
      mean_dynamics;
  std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> reward;
  Eigen::VectorXd noise_std;

  std::function<Box(const Box&, const Box&)> mean_dynamics_abs;
  std::function<Box(const Box&, const Box&)> reward_abs;
};

struct StepResult {
  Eigen::VectorXd next_state;
  double reward = 0.0;
};

// Transition with an explicit standard-normal draw; step() samples the draw.
// With a fixed draw the result is exactly mean + noise_std .* e, which is
// what lets certificates replay recorded episodes.
StepResult step_with_noise(const Mdp& env, const Eigen::VectorXd& s,
                           const Eigen::VectorXd& a, const Eigen::VectorXd& e);
StepResult step(const Mdp& env, const Eigen::VectorXd& s,
                const Eigen::VectorXd& a, RngStream& rng);

// The MDP of the worked single-dimension example: S0 = 1, dynamics s + a,
// unit noise, reward s + a.
Mdp table1_env();

// Small smooth control task: s' = s + 0.1 a + noise, r = -|s|_1 - 0.01 |a|_1,
// actions clipped to [-1, 1]^dims.
Mdp pointmass_env(int dims);

// Registry keyed by the names accepted in configs: "table1", "pointmass1",
// "pointmass2".
Mdp make_env(const std::string& name);
std::vector<std::string> env_names();

}  // namespace certrl
