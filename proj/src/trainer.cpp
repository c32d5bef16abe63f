#include "certrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <utility>

#include "certrl/certifier.hpp"

namespace certrl {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool params_finite(const Mlp& net) {
  for (const Layer& l : net.layers())
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

}  // namespace

void EpsilonSchedule::validate() const {
  if (!(eps_target >= 0.0))
    throw std::invalid_argument("schedule: eps_target must be >= 0");
  if (eps_target > 0.0 && eps_target < 1e-12)
    throw std::invalid_argument(
        "schedule: a positive eps_target must be at least the 1e-12 start");
  if (end_step < 1) throw std::invalid_argument("schedule: end_step must be >= 1");
  if (final_step < end_step)
    throw std::invalid_argument("schedule: final_step must be >= end_step");
  if (!(temperature >= 1.0))
    throw std::invalid_argument("schedule: temperature must be >= 1");
}

double EpsilonSchedule::at(int step) const {
  if (step < 0) throw std::invalid_argument("schedule: step must be >= 0");
  if (eps_target == 0.0) return 0.0;
  if (step >= end_step) return eps_target;

  constexpr double init = 1e-12;
  const double mid = 0.25 * end_step;
  const double beta = temperature;
  // Power curve up to mid, then the tangent line through its endpoint; the
  // rate is solved so the line lands exactly on eps_target at end_step.
  const double mid_pow = std::pow(mid, beta - 1.0);
  const double alpha = (eps_target - init) /
                       (mid_pow * mid + beta * mid_pow * (end_step - mid));
  const double t = static_cast<double>(step);
  if (t <= mid) return init + alpha * std::pow(t, beta);
  const double at_mid = init + alpha * mid_pow * mid;
  const double slope = alpha * beta * mid_pow;
  return at_mid + slope * (t - mid);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (init_env_episodes < 1)
    throw std::invalid_argument("train: need at least one warm-up episode");
  if (env_episodes < 0 || env_horizon < 0)
    throw std::invalid_argument("train: negative environment budget");
  if (model_rollouts < 1 || model_horizon < 1)
    throw std::invalid_argument("train: need model rollouts of length >= 1");
  if (grad_steps < 1 || normal_batch < 1 || t_train < 1 || eval_episodes < 1)
    throw std::invalid_argument("train: per-epoch counts must be >= 1");
  if (!(delta > 0.0))
    throw std::invalid_argument("train: robustness threshold must be > 0");
  if (lambda0 < 0.0)
    throw std::invalid_argument("train: initial multiplier must be >= 0");
  if (!(alpha > 0.0) || alpha_dual < 0.0)
    throw std::invalid_argument("train: bad step sizes");
  if (model_fit_epochs < 1 || model_batch < 1 || !(model_lr > 0.0) ||
      !(model_init_sigma > 0.0) || !(policy_init_sigma > 0.0))
    throw std::invalid_argument("train: bad model/policy settings");
  if (!(delta_e >= 0.0 && delta_e < 1.0))
    throw std::invalid_argument("train: delta_e must be in [0, 1)");
  schedule.validate();
}

PolicyGradient PolicyGradient::zeros_like(const GaussianPolicy& policy) {
  PolicyGradient g;
  g.net = ParamGradient::zeros_like(policy.mean_net);
  g.log_sigma = Eigen::VectorXd::Zero(policy.log_sigma.size());
  return g;
}

PolicyGradient& PolicyGradient::operator+=(const PolicyGradient& other) {
  net += other.net;
  log_sigma += other.log_sigma;
  return *this;
}

void PolicyGradient::scale(double k) {
  net.scale(k);
  log_sigma *= k;
}

std::pair<double, PolicyGradient> normal_loss(
    const GaussianPolicy& policy, const GaussianModel& model,
    const std::vector<Eigen::VectorXd>& starts, int horizon, RngStream& rng) {
  if (starts.empty()) throw std::invalid_argument("normal_loss: empty batch");
  if (horizon < 1)
    throw std::invalid_argument("normal_loss: horizon must be >= 1");
  const int k = model.state_dim;
  const int m = model.action_dim;
  if (policy.state_dim() != k || policy.action_dim() != m)
    throw std::invalid_argument("normal_loss: policy/model mismatch");

  PolicyGradient grad = PolicyGradient::zeros_like(policy);
  ParamGradient model_sink = ParamGradient::zeros_like(model.mean_net);
  const Eigen::VectorXd sigma = policy.noise_std();
  const double w = 1.0 / static_cast<double>(starts.size());
  double loss = 0.0;

  std::vector<MlpCache> policy_cache(horizon), model_cache(horizon);
  std::vector<Eigen::VectorXd> draws(horizon);

  for (const Eigen::VectorXd& s0 : starts) {
    if (s0.size() != k)
      throw std::invalid_argument("normal_loss: start state dimension");
    Eigen::VectorXd s = s0;
    for (int h = 0; h < horizon; ++h) {
      const Eigen::VectorXd mu = policy.mean_net.forward(s, &policy_cache[h]);
      draws[h] = rng.normal_vec(m);
      const Eigen::VectorXd a = mu + sigma.cwiseProduct(draws[h]);
      Eigen::VectorXd in(k + m);
      in << s, a;
      const Eigen::VectorXd out = model.mean_net.forward(in, &model_cache[h]);
      loss -= w * out[k];
      s = s + out.head(k);
    }

    Eigen::VectorXd gs = Eigen::VectorXd::Zero(k);
    for (int h = horizon - 1; h >= 0; --h) {
      Eigen::VectorXd up(k + 1);
      up.head(k) = gs;
      up[k] = -w;
      Eigen::VectorXd din;
      model.mean_net.backward(model_cache[h], up, &model_sink, &din);
      const Eigen::VectorXd da = din.tail(m);
      grad.log_sigma += da.cwiseProduct(sigma.cwiseProduct(draws[h]));
      Eigen::VectorXd ds_policy;
      policy.mean_net.backward(policy_cache[h], da, &grad.net, &ds_policy);
      gs = (gs + din.head(k) + ds_policy).eval();
    }
  }
  if (!std::isfinite(loss))
    throw std::runtime_error("normal_loss: non-finite loss");
  return {loss, std::move(grad)};
}

SymbolicLoss symbolic_loss(const GaussianPolicy& policy,
                           const GaussianModel& model,
                           const Eigen::VectorXd& s0,
                           const PerturbationSpec& spec, int t_train,
                           RngStream& rng) {
  const int k = model.state_dim;
  const int m = model.action_dim;
  if (policy.state_dim() != k || policy.action_dim() != m)
    throw std::invalid_argument("symbolic_loss: policy/model mismatch");
  if (s0.size() != k)
    throw std::invalid_argument("symbolic_loss: start state dimension");
  if (t_train < 1)
    throw std::invalid_argument("symbolic_loss: horizon must be >= 1");

  const int T = t_train;
  const Eigen::VectorXd policy_sigma = policy.noise_std();
  const Eigen::VectorXd model_sigma = model.noise_std();
  std::vector<Eigen::VectorXd> noise_pi(T), noise_env(T);
  for (int h = 0; h < T; ++h) {
    noise_pi[h] = policy_sigma.cwiseProduct(rng.normal_vec(m)).eval();
    noise_env[h] = model_sigma.cwiseProduct(rng.normal_vec(k + 1)).eval();
  }

  SymbolicLoss result;
  result.grad = PolicyGradient::zeros_like(policy);

  // Nominal pass: mean dynamics plus the shared noise, no perturbation.
  std::vector<MlpCache> cpolicy(T), cmodel(T);
  double r_nominal = 0.0;
  {
    Eigen::VectorXd s = s0;
    for (int h = 0; h < T; ++h) {
      const Eigen::VectorXd mu = policy.mean_net.forward(s, &cpolicy[h]);
      const Eigen::VectorXd a = mu + noise_pi[h];
      Eigen::VectorXd in(k + m);
      in << s, a;
      const Eigen::VectorXd out = model.mean_net.forward(in, &cmodel[h]);
      r_nominal += out[k] + noise_env[h][k];
      s = s + out.head(k) + noise_env[h].head(k);
    }
  }

  // Certified pass: the same interval rollout the certificate checker runs,
  // with caches kept for the backward sweep.
  std::vector<MlpAbsCache> apolicy(T), amodel(T);
  double r_min = 0.0;
  {
    Box s = from_point(s0);
    Box total = from_point(Eigen::VectorXd::Zero(1));
    for (int h = 0; h < T; ++h) {
      const Box obs = widen(s, spec.epsilon);
      const Box a = add(policy.mean_net.forward_abs(obs, &apolicy[h]),
                        noise_pi[h]);
      const Box out = model.mean_net.forward_abs(concat(s, a), &amodel[h]);
      Box s_next = add(segment(out, 0, k), s);
      s_next = add(s_next, Eigen::VectorXd(noise_env[h].head(k)));
      s_next = widen(s_next, model.eps_e);
      const Box r = add(segment(out, k, 1),
                        Eigen::VectorXd(noise_env[h].tail(1)));
      total = add(total, r);
      s = std::move(s_next);
      if (interval_exploded(s) || interval_exploded(r) ||
          interval_exploded(total)) {
        result.loss = std::numeric_limits<double>::infinity();
        result.exploded = true;
        return result;
      }
    }
    r_min = total.center[0] - total.deviation[0];
  }

  result.loss = r_nominal - r_min;

  ParamGradient model_sink = ParamGradient::zeros_like(model.mean_net);

  // Nominal backward: each step reward enters the loss with weight +1.
  {
    Eigen::VectorXd gs = Eigen::VectorXd::Zero(k);
    for (int h = T - 1; h >= 0; --h) {
      Eigen::VectorXd up(k + 1);
      up.head(k) = gs;
      up[k] = 1.0;
      Eigen::VectorXd din;
      model.mean_net.backward(cmodel[h], up, &model_sink, &din);
      Eigen::VectorXd ds_policy;
      policy.mean_net.backward(cpolicy[h], din.tail(m), &result.grad.net,
                               &ds_policy);
      gs = (gs + din.head(k) + ds_policy).eval();
    }
  }

  // Certified backward: the floor is center minus deviation of the reward
  // interval, entering the loss with weight -1, so each step's reward box
  // gets center upstream -1 and deviation upstream +1. Widening and noise
  // shifts are translations, so adjoints pass through them unchanged.
  {
    Eigen::VectorXd gc = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd gd = Eigen::VectorXd::Zero(k);
    for (int h = T - 1; h >= 0; --h) {
      Eigen::VectorXd up_c(k + 1), up_d(k + 1);
      up_c.head(k) = gc;
      up_c[k] = -1.0;
      up_d.head(k) = gd;
      up_d[k] = 1.0;
      Eigen::VectorXd in_c, in_d;
      model.mean_net.backward_abs(amodel[h], up_c, up_d, &model_sink, &in_c,
                                  &in_d);
      Eigen::VectorXd obs_c, obs_d;
      policy.mean_net.backward_abs(apolicy[h], in_c.tail(m), in_d.tail(m),
                                   &result.grad.net, &obs_c, &obs_d);
      gc = (gc + in_c.head(k) + obs_c).eval();
      gd = (gd + in_d.head(k) + obs_d).eval();
    }
  }

  return result;
}

TrainResult train(const Mdp& env, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!env.init_sampler || !env.mean_dynamics || !env.reward)
    throw std::invalid_argument("train: environment is missing callbacks");
  const int k = env.state_dim;
  const int m = env.action_dim;
  const int ep_len = cfg.env_horizon > 0 ? cfg.env_horizon : env.horizon;
  if (ep_len < 1) throw std::invalid_argument("train: episode length");

  RngStream init_rng = RngStream::derive(seed, 0);
  RngStream env_rng = RngStream::derive(seed, 1);
  RngStream fit_rng = RngStream::derive(seed, 2);
  RngStream rollout_rng = RngStream::derive(seed, 3);
  RngStream loss_rng = RngStream::derive(seed, 4);
  RngStream eval_rng = RngStream::derive(seed, 5);

  TrainResult out;
  out.policy = GaussianPolicy::random(k, m, cfg.policy_hidden,
                                      cfg.policy_init_sigma, init_rng);

  std::vector<int> dims;
  dims.push_back(k + m);
  for (int h : cfg.model_hidden) dims.push_back(h);
  dims.push_back(k + 1);
  out.model.mean_net =
      Mlp::random(dims, Activation::tanh, Activation::identity, init_rng);
  out.model.log_sigma =
      Eigen::VectorXd::Constant(k + 1, std::log(cfg.model_init_sigma));
  out.model.state_dim = k;
  out.model.action_dim = m;

  TransitionDataset d_env(k, m), holdout(k, m), d_model(k, m);
  long env_steps = 0;
  long records = 0;

  const auto collect = [&](int episodes) {
    for (int e = 0; e < episodes; ++e) {
      Eigen::VectorXd s = env.init_sampler(env_rng);
      for (int t = 0; t < ep_len; ++t) {
        const Eigen::VectorXd a = out.policy.act_sample(s, env_rng);
        const StepResult res = step(env, s, a, env_rng);
        Transition tr{s, a, res.next_state, res.reward};
        // Every fifth transition is held out for the model-error estimate.
        if (records % 5 == 4)
          holdout.append(std::move(tr));
        else
          d_env.append(std::move(tr));
        ++records;
        ++env_steps;
        s = res.next_state;
      }
    }
  };

  collect(cfg.init_env_episodes);

  Adam model_opt(out.model.mean_net, k + 1, cfg.model_lr);
  double lambda = cfg.lambda0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double eps_t = cfg.schedule.at(epoch);
    double sym_sum = 0.0;
    int sym_count = 0;
    try {
      fit_model_inplace(out.model, model_opt, d_env, cfg.model_fit_epochs,
                        cfg.model_batch, fit_rng);
      if (!holdout.empty()) {
        const ModelError err = measure_model_error(out.model, holdout,
                                                   cfg.delta_e);
        out.model.eps_e = err.eps_e;
        out.model.delta_e = cfg.delta_e;
        out.model.d_e = err.d_e;
      }

      for (int r = 0; r < cfg.model_rollouts; ++r) {
        Eigen::VectorXd s = d_env[rollout_rng.index(d_env.size())].s;
        for (int t = 0; t < cfg.model_horizon; ++t) {
          const Eigen::VectorXd a = out.policy.act_sample(s, rollout_rng);
          const auto [mean_next, mean_r] = out.model.predict(s, a);
          const Eigen::VectorXd noise = out.model.noise_std().cwiseProduct(
              rollout_rng.normal_vec(k + 1));
          const Eigen::VectorXd s_next = mean_next + noise.head(k);
          const double rew = mean_r + noise[k];
          if (!s_next.allFinite() || !std::isfinite(rew)) break;
          d_model.append(Transition{s, a, s_next, rew});
          s = s_next;
        }
      }

      collect(cfg.env_episodes);

      for (int g = 0; g < cfg.grad_steps; ++g) {
        std::vector<Eigen::VectorXd> starts;
        starts.reserve(cfg.normal_batch);
        for (int b = 0; b < cfg.normal_batch; ++b)
          starts.push_back(d_model[loss_rng.index(d_model.size())].s);
        auto nominal = normal_loss(out.policy, out.model, starts,
                                   cfg.model_horizon, loss_rng);

        const Eigen::VectorXd s_t =
            d_model[loss_rng.index(d_model.size())].s;
        const SymbolicLoss sym =
            symbolic_loss(out.policy, out.model, s_t, PerturbationSpec(eps_t),
                          cfg.t_train, loss_rng);

        PolicyGradient update = std::move(nominal.second);
        if (sym.exploded) {
          ++out.symbolic_skipped;
        } else {
          PolicyGradient weighted = sym.grad;
          weighted.scale(lambda);
          update += weighted;
          sym_sum += sym.loss;
          ++sym_count;
        }
        out.policy.mean_net.apply_gradient(update.net, cfg.alpha);
        out.policy.log_sigma -= cfg.alpha * update.log_sigma;
        if (!sym.exploded)
          lambda = std::max(0.0, lambda + cfg.alpha_dual *
                                              (sym.loss - cfg.delta));
      }

      if (!params_finite(out.policy.mean_net) ||
          !out.policy.log_sigma.allFinite() ||
          !params_finite(out.model.mean_net) ||
          !out.model.log_sigma.allFinite())
        throw std::runtime_error("parameters diverged");
    } catch (const std::exception& e) {
      throw std::runtime_error("train: aborted at epoch " +
                               std::to_string(epoch) + ": " + e.what());
    }

    double nominal_reward = 0.0;
    for (int e = 0; e < cfg.eval_episodes; ++e) {
      Eigen::VectorXd s = env.init_sampler(eval_rng);
      for (int t = 0; t < ep_len; ++t) {
        const StepResult res = step(env, s, out.policy.act_mean(s), eval_rng);
        nominal_reward += res.reward;
        s = res.next_state;
      }
    }
    nominal_reward /= cfg.eval_episodes;

    out.log.push_back({epoch, env_steps, nominal_reward,
                       sym_count > 0 ? sym_sum / sym_count : 0.0, lambda,
                       eps_t});
  }
  return out;
}

std::string log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,env_steps,nominal_reward,symbolic_loss,lambda,epsilon_t\n";
  for (const EpochLog& row : log) {
    out += std::to_string(row.epoch) + "," + std::to_string(row.env_steps) +
           "," + fmt(row.nominal_reward) + "," + fmt(row.symbolic_loss) + "," +
           fmt(row.lambda) + "," + fmt(row.epsilon_t) + "\n";
  }
  return out;
}

void save_log_csv(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write log: " + path);
  out << log_csv(log);
  if (!out) throw std::runtime_error("log write failed: " + path);
}

}  // namespace certrl
