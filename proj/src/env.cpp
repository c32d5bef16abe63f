#include "certrl/env.hpp"

#include <stdexcept>

namespace certrl {

StepResult step_with_noise(const Mdp& env, const Eigen::VectorXd& s,
                           const Eigen::VectorXd& a, const Eigen::VectorXd& e) {
  if (s.size() != env.state_dim || a.size() != env.action_dim ||
      e.size() != env.state_dim)
    throw std::invalid_argument("step: dimension mismatch for env " + env.name);
  StepResult out;
  out.next_state = env.mean_dynamics(s, a) + env.noise_std.cwiseProduct(e);
  out.reward = env.reward(s, a);
  return out;
}

StepResult step(const Mdp& env, const Eigen::VectorXd& s,
                const Eigen::VectorXd& a, RngStream& rng) {
  return step_with_noise(env, s, a, rng.normal_vec(env.state_dim));
}

Mdp table1_env() {
  Mdp env;
  env.name = "table1";
  env.state_dim = 1;
  env.action_dim = 1;
  env.horizon = 2;
  env.dynamics_lipschitz = 2.0;
  env.reward_lipschitz = 2.0;
  env.noise_std = Eigen::VectorXd::Ones(1);
  env.init_sampler = [](RngStream&) {
    return Eigen::VectorXd::Constant(1, 1.0);
  };
  env.mean_dynamics = [](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    return Eigen::VectorXd(s + a);
  };
  env.reward = [](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    return s[0] + a[0];
  };
  env.mean_dynamics_abs = [](const Box& s, const Box& a) { return add(s, a); };
  env.reward_abs = [](const Box& s, const Box& a) {
    return sum_elements(add(s, a));
  };
  return env;
}

Mdp pointmass_env(int dims) {
  if (dims < 1 || dims > 2)
    throw std::invalid_argument("pointmass_env: dims must be 1 or 2");
  Mdp env;
  env.name = "pointmass" + std::to_string(dims);
  env.state_dim = dims;
  env.action_dim = dims;
  env.horizon = 50;
  env.dynamics_lipschitz = 1.1;
  env.reward_lipschitz = 1.01 * dims;
  env.noise_std = Eigen::VectorXd::Constant(dims, 0.01);
  env.init_sampler = [dims](RngStream& rng) {
    return rng.uniform_vec(dims, -1.0, 1.0);
  };
  env.mean_dynamics = [](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    const Eigen::VectorXd ac = a.cwiseMax(-1.0).cwiseMin(1.0);
    return Eigen::VectorXd(s + 0.1 * ac);
  };
  env.reward = [](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    const Eigen::VectorXd ac = a.cwiseMax(-1.0).cwiseMin(1.0);
    return -s.lpNorm<1>() - 0.01 * ac.lpNorm<1>();
  };
  env.mean_dynamics_abs = [](const Box& s, const Box& a) {
    return add(s, scale(clamp(a, -1.0, 1.0), 0.1));
  };
  env.reward_abs = [](const Box& s, const Box& a) {
    const Box cost_s = sum_elements(abs(s));
    const Box cost_a = sum_elements(abs(clamp(a, -1.0, 1.0)));
    return add(scale(cost_s, -1.0), scale(cost_a, -0.01));
  };
  return env;
}

Mdp make_env(const std::string& name) {
  if (name == "table1") return table1_env();
  if (name == "pointmass1") return pointmass_env(1);
  if (name == "pointmass2") return pointmass_env(2);
  throw std::invalid_argument(
      "unknown environment '" + name + "'; known: table1, pointmass1, pointmass2");
}

std::vector<std::string> env_names() {
  return {"table1", "pointmass1", "pointmass2"};
}

}  // namespace certrl
