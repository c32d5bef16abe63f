#include "certrl/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace certrl {

AttackKind attack_kind_from_string(const std::string& name) {
  if (name == "random") return AttackKind::random;
  if (name == "grid_corner") return AttackKind::grid_corner;
  if (name == "gradient_mad") return AttackKind::gradient_mad;
  throw std::invalid_argument("unknown attack kind: " + name);
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::random:
      return "random";
    case AttackKind::grid_corner:
      return "grid_corner";
    case AttackKind::gradient_mad:
      return "gradient_mad";
  }
  throw std::invalid_argument("unknown attack kind");
}

void AttackConfig::validate() const {
  if (!std::isfinite(epsilon) || epsilon < 0.0)
    throw std::invalid_argument("attack: epsilon must be finite and >= 0");
  if (steps < 1) throw std::invalid_argument("attack: steps must be >= 1");
  if (!std::isfinite(step_size) || step_size < 0.0)
    throw std::invalid_argument("attack: step_size must be finite and >= 0");
}

namespace {

// Clamps to the same endpoint values widen(s, eps) produces, so attacked
// observations sit inside the certificate's observation box coordinate for
// coordinate.
Eigen::VectorXd project_ball(const Eigen::VectorXd& v,
                             const Eigen::VectorXd& s, double eps) {
  return v.array().max(s.array() - eps).min(s.array() + eps).matrix();
}

double displacement(const GaussianPolicy& policy,
                    const Eigen::VectorXd& base_action,
                    const Eigen::VectorXd& nu) {
  return (policy.act_mean(nu) - base_action).squaredNorm();
}

// Projected sign-gradient ascent on the mean-action displacement
// || mu(nu) - mu(s) ||^2. The objective is critical at nu = s, so the ascent
// starts from a uniform point of the ball and keeps its best iterate, which
// also makes the result at least as displaced as the random attack fed the
// same stream.
Eigen::VectorXd mad_attack(const GaussianPolicy& policy,
                           const Eigen::VectorXd& s, const AttackConfig& cfg,
                           RngStream& rng) {
  const int k = static_cast<int>(s.size());
  const Eigen::VectorXd base = policy.act_mean(s);
  const double eta =
      cfg.step_size > 0.0 ? cfg.step_size : 2.5 * cfg.epsilon / cfg.steps;

  Eigen::VectorXd nu =
      project_ball(s + rng.uniform_vec(k, -cfg.epsilon, cfg.epsilon), s,
                   cfg.epsilon);
  Eigen::VectorXd best = nu;
  double best_f = displacement(policy, base, nu);
  for (int it = 0; it < cfg.steps; ++it) {
    MlpCache cache;
    const Eigen::VectorXd mu = policy.mean_net.forward(nu, &cache);
    Eigen::VectorXd g;
    policy.mean_net.backward(cache, mu - base, nullptr, &g);
    nu = project_ball(nu + eta * g.cwiseSign(), s, cfg.epsilon);
    const double f = displacement(policy, base, nu);
    if (f > best_f) {
      best_f = f;
      best = nu;
    }
  }
  return best;
}

Eigen::VectorXd corner_attack(const GaussianPolicy& policy, const Mdp& env,
                              const Eigen::VectorXd& s,
                              const AttackConfig& cfg) {
  const int k = static_cast<int>(s.size());
  if (k > 2)
    throw std::invalid_argument(
        "attack: grid_corner enumerates corners for at most 2 dims");
  Eigen::VectorXd best = s;
  double best_r = std::numeric_limits<double>::infinity();
  for (int mask = 0; mask < (1 << k); ++mask) {
    Eigen::VectorXd nu = s;
    for (int i = 0; i < k; ++i)
      nu[i] += ((mask >> i) & 1) ? cfg.epsilon : -cfg.epsilon;
    const double r = env.reward(s, policy.act_mean(nu));
    if (r < best_r) {
      best_r = r;
      best = nu;
    }
  }
  return best;
}

}  // namespace

Eigen::VectorXd attack_state(const GaussianPolicy& policy, const Mdp* env,
                             const Eigen::VectorXd& s, const AttackConfig& cfg,
                             RngStream& rng) {
  cfg.validate();
  if (s.size() != policy.state_dim())
    throw std::invalid_argument("attack: state dimension mismatch");
  if (cfg.epsilon == 0.0 || !s.allFinite()) return s;
  switch (cfg.kind) {
    case AttackKind::random:
      return project_ball(
          s + rng.uniform_vec(static_cast<int>(s.size()), -cfg.epsilon,
                              cfg.epsilon),
          s, cfg.epsilon);
    case AttackKind::grid_corner:
      if (!env)
        throw std::invalid_argument(
            "attack: grid_corner needs an environment");
      return corner_attack(policy, *env, s, cfg);
    case AttackKind::gradient_mad:
      return mad_attack(policy, s, cfg, rng);
  }
  throw std::invalid_argument("unknown attack kind");
}

AttackResult attacked_return(const GaussianPolicy& policy, const Mdp& env,
                             const AttackConfig& cfg, int episodes,
                             std::uint64_t seed, int threads) {
  cfg.validate();
  if (episodes < 1)
    throw std::invalid_argument("attacked_return: episodes must be >= 1");
  if (threads < 1)
    throw std::invalid_argument("attacked_return: threads must be >= 1");
  if (policy.state_dim() != env.state_dim ||
      policy.action_dim() != env.action_dim)
    throw std::invalid_argument("attacked_return: policy/env mismatch");
  if (env.horizon < 1)
    throw std::invalid_argument("attacked_return: env horizon must be >= 1");
  if (!env.init_sampler || !env.mean_dynamics || !env.reward)
    throw std::invalid_argument("attacked_return: env is missing callbacks");

  AttackResult out;
  out.returns.assign(episodes, 0.0);

  const auto run_range = [&](int lo, int hi) {
    for (int e = lo; e < hi; ++e) {
      RngStream stream =
          RngStream::derive(seed, static_cast<std::uint64_t>(e));
      Eigen::VectorXd s = env.init_sampler(stream);
      double total = 0.0;
      for (int t = 0; t < env.horizon; ++t) {
        if (!s.allFinite()) break;
        const Eigen::VectorXd nu = attack_state(policy, &env, s, cfg, stream);
        const StepResult res = step(env, s, policy.act_mean(nu), stream);
        total += res.reward;
        s = res.next_state;
      }
      out.returns[e] = total;
    }
  };

  if (threads == 1) {
    run_range(0, episodes);
  } else {
    const int chunk = (episodes + threads - 1) / threads;
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
      const int lo = w * chunk;
      const int hi = std::min(episodes, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(run_range, lo, hi);
    }
    for (std::thread& th : pool) th.join();
  }

  double sum = 0.0;
  for (double r : out.returns) sum += r;
  out.mean = sum / episodes;
  double ss = 0.0;
  for (double r : out.returns) ss += (r - out.mean) * (r - out.mean);
  out.stddev = episodes > 1 ? std::sqrt(ss / (episodes - 1)) : 0.0;
  return out;
}

}  // namespace certrl
