// Acceptance gate: ten end-to-end checks, one [PASS]/[FAIL] line each.
// Exit code is the number of failed checks. The pipeline check shells out
// to the command-line binary named by CERTRL_BIN (or argv[1]).

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "certrl/attack.hpp"
#include "certrl/certifier.hpp"
#include "certrl/config.hpp"
#include "certrl/env.hpp"
#include "certrl/mlp.hpp"
#include "certrl/model.hpp"
#include "certrl/rng.hpp"
#include "certrl/trainer.hpp"

namespace fs = std::filesystem;
using namespace certrl;

namespace {

std::string g_cli_bin;

std::string fmt(const char* pattern, double a, double b = 0.0,
                double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c);
  return buf;
}

GaussianPolicy gain_policy(int k, double gain, double sigma) {
  Layer layer;
  layer.weight = gain * Eigen::MatrixXd::Identity(k, k);
  layer.bias = Eigen::VectorXd::Zero(k);
  layer.act = Activation::identity;
  GaussianPolicy p;
  p.mean_net = Mlp({layer});
  p.log_sigma = Eigen::VectorXd::Constant(k, std::log(sigma));
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + g_cli_bin +
                          "' " + args + " > /dev/null 2> /dev/null";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

// ---------------------------------------------------------------------------
// 1. Worked example: exact interval and sampled estimate.

std::string check_worked_example_interval() {
  const auto start = std::chrono::steady_clock::now();
  const Mdp env = table1_env();
  const EnvDynamics dyn(env);
  const GaussianPolicy policy = gain_policy(1, 1.0, 0.02);
  const Eigen::VectorXd s0 = Eigen::VectorXd::Ones(1);

  const AbstractTrace tr = abstract_rollout(
      policy, dyn, s0, PerturbationSpec(0.5), 2, NoiseRecord::zeros(2, 1, 1));
  if (!tr.certifiable) return "zero-noise rollout not certifiable";
  const double lo = tr.total_reward.lower()[0];
  const double hi = tr.total_reward.upper()[0];
  if (std::abs(lo - 4.0) > 1e-9 || std::abs(hi - 8.0) > 1e-9)
    return fmt("zero-noise interval [%.12g, %.12g], want [4, 8]", lo, hi);

  CertConfig cc;
  cc.num_samples = 1000;
  cc.horizon = 2;
  cc.threads = 4;
  const WcarResult w =
      wcar(policy, dyn, env.init_sampler, PerturbationSpec(0.5), cc, 3);
  if (std::abs(w.wcar - 4.0) > 0.2)
    return fmt("sampled estimate %.6g not within 0.2 of 4.0", w.wcar);

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  if (secs >= 1.0) return fmt("took %.2f s, limit 1 s", secs);
  return "";
}

// ---------------------------------------------------------------------------
// 2. Worked example: the three fixed adversary traces.

std::string check_worked_example_rows() {
  const Mdp env = table1_env();
  const GaussianPolicy policy = gain_policy(1, 1.0, 0.02);

  const std::vector<std::pair<std::vector<double>, double>> rows = {
      {{0.0, 0.0}, 6.0}, {{0.1, -0.4}, 5.9}, {{-0.2, -0.3}, 5.1}};
  for (const auto& [pert, want] : rows) {
    Eigen::VectorXd s = Eigen::VectorXd::Ones(1);
    double total = 0.0;
    for (double eps_t : pert) {
      const Eigen::VectorXd a =
          policy.act_mean(s + Eigen::VectorXd::Constant(1, eps_t));
      total += env.reward(s, a);
      s = env.mean_dynamics(s, a);
    }
    if (std::abs(total - want) > 1e-9)
      return fmt("adversary trace returned %.12g, want %.12g", total, want);
  }
  return "";
}

// ---------------------------------------------------------------------------
// 3. Interval propagation contains sampled network outputs.

std::string check_interval_containment() {
  const auto start = std::chrono::steady_clock::now();
  RngStream rng = RngStream::derive(41, 0);
  const Activation hidden_acts[] = {Activation::tanh, Activation::relu,
                                    Activation::sigmoid};
  long violations = 0;
  const int instances = 1000;
  for (int n = 0; n < instances; ++n) {
    const int depth = 1 + static_cast<int>(rng.index(3));
    std::vector<int> dims(depth + 1);
    for (int& d : dims) d = 1 + static_cast<int>(rng.index(16));
    const Mlp net = Mlp::random(dims, hidden_acts[rng.index(3)],
                                rng.index(2) == 0 ? Activation::identity
                                                  : Activation::tanh,
                                rng);
    Box in;
    in.center = rng.uniform_vec(dims.front(), -2.0, 2.0);
    in.deviation = rng.uniform_vec(dims.front(), 0.0, 1.5);
    const Box out = net.forward_abs(in);

    for (int k = 0; k < 100; ++k) {
      Eigen::VectorXd x(dims.front());
      for (int i = 0; i < x.size(); ++i)
        x[i] = rng.uniform(in.lower()[i], in.upper()[i]);
      if (!out.contains(net.forward(x), 1e-9)) ++violations;
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  if (violations > 0)
    return fmt("%g of %g sampled outputs escaped their box",
               static_cast<double>(violations), instances * 100.0);
  if (secs >= 30.0) return fmt("took %.1f s, limit 30 s", secs);
  return "";
}

// ---------------------------------------------------------------------------
// 4. Certificates lower bound adversarial episodes (exact dynamics).

std::string check_certificate_soundness() {
  const auto start = std::chrono::steady_clock::now();
  struct Setup {
    std::string env_name;
    int T;
    double eps;
  };
  const std::vector<Setup> setups = {
      {"table1", 2, 0.5}, {"pointmass1", 5, 0.1}, {"pointmass2", 4, 0.1}};

  long episodes = 0, violations = 0, uncertifiable = 0;
  std::uint64_t stream_id = 0;
  for (const Setup& su : setups) {
    const Mdp env = make_env(su.env_name);
    const EnvDynamics dyn(env);
    const int k = env.state_dim;
    RngStream pol_rng = RngStream::derive(43, stream_id);
    const std::vector<GaussianPolicy> policies = {
        gain_policy(k, su.env_name == "table1" ? 1.0 : -0.5, 0.01),
        GaussianPolicy::random(k, env.action_dim, {8}, 0.05, pol_rng)};

    for (std::size_t pi = 0; pi < policies.size(); ++pi) {
      const GaussianPolicy& policy = policies[pi];
      for (int adv = 0; adv < 2; ++adv) {
        for (int e = 0; e < 850; ++e) {
          ++episodes;
          ++stream_id;
          RngStream ep = RngStream::derive(47, stream_id);
          const Eigen::VectorXd s0 = env.init_sampler(ep);
          NoiseRecord rec = NoiseRecord::zeros(su.T, env.action_dim, k);
          for (int t = 0; t < su.T; ++t)
            rec.env[t].head(k) =
                env.noise_std.cwiseProduct(ep.normal_vec(k));

          const AbstractTrace tr =
              abstract_rollout(policy, dyn, s0, PerturbationSpec(su.eps),
                               su.T, rec);
          if (!tr.certifiable) {
            ++uncertifiable;
            continue;
          }

          RngStream atk = RngStream::derive(53, stream_id);
          Eigen::VectorXd s = s0;
          double total = 0.0;
          for (int t = 0; t < su.T; ++t) {
            Eigen::VectorXd pert(k);
            if (adv == 0) {
              pert = atk.uniform_vec(k, -su.eps, su.eps);
            } else {
              for (int i = 0; i < k; ++i)
                pert[i] = atk.index(2) == 0 ? -su.eps : su.eps;
            }
            const Eigen::VectorXd a = policy.act_mean(s + pert);
            total += env.reward(s, a) + rec.env[t][k];
            s = env.mean_dynamics(s, a) + rec.env[t].head(k);
          }
          // The corner adversary attains the interval infimum exactly, so
          // the replayed sum and the bound differ only by accumulation
          // order; compare at float resolution (observed drift < 1e-15).
          const double lb = tr.lower_bound();
          if (total < lb - 1e-12 * std::max(1.0, std::abs(lb))) ++violations;
        }
      }
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  if (uncertifiable > 0)
    return fmt("%g rollouts not certifiable",
               static_cast<double>(uncertifiable));
  if (violations > 0)
    return fmt("%g of %g adversarial episodes fell below the floor",
               static_cast<double>(violations),
               static_cast<double>(episodes));
  if (episodes < 10000)
    return fmt("only %g episodes run", static_cast<double>(episodes));
  if (secs >= 120.0) return fmt("took %.1f s, limit 120 s", secs);
  return "";
}

// ---------------------------------------------------------------------------
// 5. Gradients match central finite differences.

ParamGradient numeric_grad(Mlp& net, const std::function<double()>& f) {
  ParamGradient g = ParamGradient::zeros_like(net);
  const double h = 1e-5;
  for (std::size_t l = 0; l < net.mutable_layers().size(); ++l) {
    Layer& layer = net.mutable_layers()[l];
    for (int i = 0; i < layer.weight.rows(); ++i)
      for (int j = 0; j < layer.weight.cols(); ++j) {
        const double keep = layer.weight(i, j);
        layer.weight(i, j) = keep + h;
        const double hi = f();
        layer.weight(i, j) = keep - h;
        const double lo = f();
        layer.weight(i, j) = keep;
        g.weight[l](i, j) = (hi - lo) / (2.0 * h);
      }
    for (int i = 0; i < layer.bias.size(); ++i) {
      const double keep = layer.bias[i];
      layer.bias[i] = keep + h;
      const double hi = f();
      layer.bias[i] = keep - h;
      const double lo = f();
      layer.bias[i] = keep;
      g.bias[l][i] = (hi - lo) / (2.0 * h);
    }
  }
  return g;
}

bool grads_close(const ParamGradient& got, const ParamGradient& want,
                 double tol) {
  for (std::size_t l = 0; l < got.weight.size(); ++l) {
    const Eigen::MatrixXd dw = got.weight[l] - want.weight[l];
    for (int i = 0; i < dw.rows(); ++i)
      for (int j = 0; j < dw.cols(); ++j)
        if (std::abs(dw(i, j)) >
            tol * std::max(1.0, std::abs(want.weight[l](i, j))))
          return false;
    const Eigen::VectorXd db = got.bias[l] - want.bias[l];
    for (int i = 0; i < db.size(); ++i)
      if (std::abs(db[i]) > tol * std::max(1.0, std::abs(want.bias[l][i])))
        return false;
  }
  return true;
}

std::string check_gradients() {
  RngStream rng = RngStream::derive(61, 0);
  int concrete_bad = 0, abstract_bad = 0;
  const int instances = 100;
  for (int n = 0; n < instances; ++n) {
    const int depth = 1 + static_cast<int>(rng.index(3));
    std::vector<int> dims(depth + 1);
    for (int& d : dims) d = 1 + static_cast<int>(rng.index(8));
    Mlp net =
        Mlp::random(dims, Activation::tanh, Activation::tanh, rng);

    const Eigen::VectorXd x = rng.uniform_vec(dims.front(), -1.5, 1.5);
    const Eigen::VectorXd up = rng.uniform_vec(dims.back(), -1.0, 1.0);
    MlpCache cache;
    net.forward(x, &cache);
    ParamGradient got = ParamGradient::zeros_like(net);
    net.backward(cache, up, &got);
    const ParamGradient want =
        numeric_grad(net, [&] { return up.dot(net.forward(x)); });
    if (!grads_close(got, want, 1e-4)) ++concrete_bad;

    Box in;
    in.center = rng.uniform_vec(dims.front(), -1.5, 1.5);
    in.deviation = rng.uniform_vec(dims.front(), 0.0, 0.8);
    const Eigen::VectorXd up_c = rng.uniform_vec(dims.back(), -1.0, 1.0);
    const Eigen::VectorXd up_d = rng.uniform_vec(dims.back(), -1.0, 1.0);
    MlpAbsCache ac;
    net.forward_abs(in, &ac);
    ParamGradient got_abs = ParamGradient::zeros_like(net);
    net.backward_abs(ac, up_c, up_d, &got_abs);
    const ParamGradient want_abs = numeric_grad(net, [&] {
      const Box out = net.forward_abs(in);
      return up_c.dot(out.center) + up_d.dot(out.deviation);
    });
    if (!grads_close(got_abs, want_abs, 1e-4)) ++abstract_bad;
  }
  if (concrete_bad + abstract_bad > 0)
    return fmt("%g concrete and %g interval instances off by more than 1e-4",
               concrete_bad, abstract_bad);
  return "";
}

// ---------------------------------------------------------------------------
// 6. Monotonicity in the radius and in the per-step horizon trend.

std::string check_monotonicity() {
  const Mdp env1 = pointmass_env(1);
  const EnvDynamics dyn1(env1);
  RngStream prng = RngStream::derive(67, 0);
  const std::vector<GaussianPolicy> policies = {
      gain_policy(1, -2.0, 0.01),
      GaussianPolicy::random(1, 1, {8}, 0.05, prng)};

  const std::vector<double> radii = {0.0, 1.0 / 255.0, 0.01, 0.05, 0.1};
  for (const GaussianPolicy& policy : policies) {
    for (std::uint64_t seed : {7ull, 8ull, 9ull}) {
      double prev = std::numeric_limits<double>::infinity();
      for (double eps : radii) {
        CertConfig cc;
        cc.num_samples = 100;
        cc.horizon = 5;
        cc.threads = 4;
        const WcarResult w = wcar(policy, dyn1, env1.init_sampler,
                                  PerturbationSpec(eps), cc, seed);
        if (!(w.wcar <= prev + 1e-12))
          return fmt("estimate rose from %.12g to %.12g as the radius grew",
                     prev, w.wcar);
        prev = w.wcar;
      }
    }
  }

  // Horizon trend at a radius where adversarial compounding dominates the
  // contraction transient of the uniform initial state; at small radii the
  // per-step floor first improves as states settle.
  for (int dims : {1, 2}) {
    const Mdp env = pointmass_env(dims);
    const EnvDynamics dyn(env);
    const GaussianPolicy policy = gain_policy(dims, -2.0, 0.01);
    double prev = std::numeric_limits<double>::infinity();
    for (int T : {1, 2, 5, 10, 20}) {
      double mean = 0.0;
      for (std::uint64_t seed : {7ull, 8ull, 9ull}) {
        CertConfig cc;
        cc.num_samples = 100;
        cc.horizon = T;
        cc.threads = 4;
        mean += wcar(policy, dyn, env.init_sampler, PerturbationSpec(0.5),
                     cc, seed)
                    .wcar;
      }
      const double per_step = mean / 3.0 / T;
      if (!(per_step <= prev + 1e-9))
        return fmt("per-step floor rose from %.9g to %.9g with the horizon",
                   prev, per_step);
      prev = per_step;
    }
  }
  return "";
}

// ---------------------------------------------------------------------------
// 7. Regularized training improves the certified floor.

std::string check_training_efficacy(std::string* detail) {
  const auto start = std::chrono::steady_clock::now();
  const Mdp env = pointmass_env(1);
  const EnvDynamics exact(env);

  double wcar_sum[2] = {0.0, 0.0};
  double nominal_sum[2] = {0.0, 0.0};
  std::string per_seed;
  for (std::uint64_t seed : {101ull, 202ull, 303ull}) {
    for (int arm = 0; arm < 2; ++arm) {
      TrainConfig tc;
      tc.epochs = 120;
      tc.init_env_episodes = 5;
      tc.env_episodes = 1;
      tc.model_rollouts = 16;
      tc.model_horizon = 5;
      tc.grad_steps = 15;
      tc.t_train = 1;
      tc.normal_batch = 16;
      tc.eval_episodes = 4;
      tc.delta = 1.3;
      tc.lambda0 = arm == 0 ? 0.3 : 0.0;
      tc.alpha = 3e-3;
      tc.alpha_dual = arm == 0 ? 1e-2 : 0.0;
      tc.schedule.eps_target = arm == 0 ? 0.25 : 0.0;
      tc.schedule.end_step = 80;
      tc.schedule.final_step = 120;
      const TrainResult res = train(env, tc, seed);

      CertConfig cc;
      cc.num_samples = 100;
      cc.horizon = 5;
      cc.threads = 4;
      const double w = wcar(res.policy, exact, env.init_sampler,
                            PerturbationSpec(0.1), cc, 7)
                           .wcar;
      AttackConfig nom;
      nom.epsilon = 0.0;
      const double r = attacked_return(res.policy, env, nom, 50, 7, 4).mean;
      wcar_sum[arm] += w;
      nominal_sum[arm] += r;
      per_seed += fmt(arm == 0 ? " [%g: %.3f" : " %.3f]", arm == 0
                          ? static_cast<double>(seed) : w, w);
    }
  }

  const double wc = wcar_sum[0] / 3, wb = wcar_sum[1] / 3;
  const double nc = nominal_sum[0] / 3, nb = nominal_sum[1] / 3;
  const double degradation = (nb - nc) / std::abs(nb);
  *detail = fmt("floor %.4f vs %.4f, nominal drop %.1f%%", wc, wb,
                100.0 * degradation) + per_seed;

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  if (!(wc > wb))
    return fmt("regularized floor %.4f does not beat %.4f", wc, wb) +
           per_seed;
  if (!(degradation < 0.30))
    return fmt("nominal return dropped %.1f%%, limit 30%%",
               100.0 * degradation);
  if (secs >= 900.0) return fmt("took %.0f s, limit 900 s", secs);
  return "";
}

// ---------------------------------------------------------------------------
// 8. Bound evaluator: worked correction and collapse cases.

std::string check_bound_evaluator() {
  const double worked =
      theorem1_bound(10.0, 0.0, 1, 0.05, 0.1, 2, 0.5, 0.5, 1.0, 1.0);
  if (std::abs(worked - (10.0 - 0.285)) > 1e-12)
    return fmt("worked bound %.15g, want %.15g", worked, 10.0 - 0.285);

  // With no model error the correction vanishes exactly: the bound must be
  // bit-identical for wildly different horizons and Lipschitz products.
  for (double mean : {-5.0, 0.0, 10.0}) {
    const double a = theorem1_bound(mean, 0.0, 7, 0.05, 0.0, 1, 0.1, 0.1,
                                    0.5, 0.0);
    const double b = theorem1_bound(mean, 0.0, 7, 0.05, 0.0, 20, 5.0, 3.0,
                                    9.0, 100.0);
    if (a != mean || b != mean)
      return fmt("zero-variance zero-model-error bound %.17g, want %.17g",
                 a, mean);
  }
  const double v1 =
      theorem1_bound(2.0, 4.0, 50, 0.1, 0.0, 2, 0.5, 0.5, 1.0, 1.0);
  const double v2 =
      theorem1_bound(2.0, 4.0, 50, 0.1, 0.0, 19, 7.0, 2.0, 3.0, 42.0);
  if (v1 != v2)
    return fmt("correction leaked into the bound: %.17g vs %.17g", v1, v2);
  if (!(v1 < 2.0)) return fmt("sampling term missing: bound %.17g", v1);
  return "";
}

// ---------------------------------------------------------------------------
// 9. Attacked returns never undercut the certified floor.

std::string check_attack_dominance() {
  Mdp env = pointmass_env(1);
  env.horizon = 5;
  const GaussianPolicy policy = gain_policy(1, -0.5, 0.01);
  const EnvDynamics dyn(env);
  const PerturbationSpec spec(0.1);
  const int T = env.horizon;

  Eigen::VectorXd noise_scale(2);
  noise_scale << env.noise_std, 0.0;

  long episodes = 0, violations = 0;
  for (AttackKind kind : {AttackKind::random, AttackKind::grid_corner,
                          AttackKind::gradient_mad}) {
    AttackConfig cfg;
    cfg.kind = kind;
    cfg.epsilon = spec.epsilon;
    for (int i = 0; i < 400; ++i) {
      ++episodes;
      RngStream ep = RngStream::derive(71, static_cast<std::uint64_t>(i));
      const Eigen::VectorXd s0 = env.init_sampler(ep);
      NoiseRecord rec = NoiseRecord::zeros(T, 1, 1);
      for (int t = 0; t < T; ++t)
        rec.env[t] = noise_scale.cwiseProduct(ep.normal_vec(2)).eval();

      const AbstractTrace tr = abstract_rollout(policy, dyn, s0, spec, T, rec);
      if (!tr.certifiable) {
        ++violations;
        continue;
      }

      RngStream atk = RngStream::derive(73, static_cast<std::uint64_t>(i));
      Eigen::VectorXd s = s0;
      double total = 0.0;
      for (int t = 0; t < T; ++t) {
        const Eigen::VectorXd nu = attack_state(policy, &env, s, cfg, atk);
        const Eigen::VectorXd a = policy.act_mean(nu);
        total += env.reward(s, a) + rec.env[t][1];
        s = env.mean_dynamics(s, a) + rec.env[t].head(1);
      }
      if (total < tr.lower_bound()) ++violations;
    }
  }
  if (violations > 0)
    return fmt("%g of %g attacked episodes fell below the floor",
               static_cast<double>(violations), static_cast<double>(episodes));
  return "";
}

// ---------------------------------------------------------------------------
// 10. Pipeline reproducibility and single-bit tamper detection.

std::string check_pipeline_reproducibility() {
  if (g_cli_bin.empty())
    return "command-line binary not given (set CERTRL_BIN or pass argv[1])";

  const fs::path dir = fs::temp_directory_path() /
                       ("certrl_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  struct Cleanup {
    fs::path p;
    ~Cleanup() { fs::remove_all(p); }
  } cleanup{dir};

  RunConfig rc;
  rc.env_name = "pointmass1";
  rc.seed = 7;
  rc.epsilon = 0.05;
  rc.train.epochs = 3;
  rc.train.init_env_episodes = 2;
  rc.train.env_episodes = 1;
  rc.train.env_horizon = 20;
  rc.train.model_rollouts = 8;
  rc.train.model_horizon = 5;
  rc.train.grad_steps = 4;
  rc.train.t_train = 1;
  rc.train.normal_batch = 4;
  rc.train.eval_episodes = 2;
  rc.train.policy_hidden = {8};
  rc.train.model_hidden = {8};
  rc.train.model_fit_epochs = 10;
  rc.train.model_batch = 32;
  rc.train.schedule.eps_target = 0.05;
  rc.train.schedule.end_step = 2;
  rc.train.schedule.final_step = 3;
  rc.cert.num_samples = 20;
  rc.cert.horizon = 5;
  write_file(dir / "tiny.cfg", rc.to_file_text());

  for (const std::string run : {"a", "b"}) {
    if (run_cli(dir, "train --config tiny.cfg --out-dir " + run) != 0)
      return "training command failed";
    if (run_cli(dir, "certify --config tiny.cfg --policy " + run +
                         "/policy.ckpt --model " + run +
                         "/model.ckpt --out-dir " + run) != 0)
      return "certify command failed";
  }

  if (read_file(dir / "a" / "policy.ckpt") !=
      read_file(dir / "b" / "policy.ckpt"))
    return "policy checkpoints differ between identical runs";
  for (int i = 0; i < rc.cert.num_samples; ++i) {
    char name[40];
    std::snprintf(name, sizeof(name), "certs/trace_%05d.txt", i);
    if (read_file(dir / "a" / name) != read_file(dir / "b" / name))
      return std::string("certificate ") + name + " differs between runs";
  }
  if (run_cli(dir, "verify a") != 0)
    return "verify rejected an untampered bundle";

  // Single-bit tampering of the accumulated-reward bound must be caught:
  // flip every bit of two digits of the "total" line in one certificate.
  const fs::path victim = dir / "a" / "certs" / "trace_00004.txt";
  const std::string original = read_file(victim);
  const std::size_t line = original.find("\ntotal ");
  if (line == std::string::npos) return "certificate has no total line";
  std::vector<std::size_t> digit_positions;
  for (std::size_t i = line + 1; i < original.size() && original[i] != '\n';
       ++i)
    if (original[i] >= '0' && original[i] <= '9')
      digit_positions.push_back(i);
  if (digit_positions.size() < 2) return "total line has no digits";

  for (std::size_t pos : {digit_positions.front(), digit_positions.back()}) {
    for (int bit = 0; bit < 8; ++bit) {
      std::string tampered = original;
      tampered[pos] = static_cast<char>(tampered[pos] ^ (1 << bit));
      write_file(victim, tampered);
      const int code = run_cli(dir, "verify a");
      if (code != 3) {
        write_file(victim, original);
        return fmt("bit %g flip exited %g, want 3", bit, code);
      }
    }
  }
  write_file(victim, original);
  if (run_cli(dir, "verify a") != 0)
    return "verify rejected the restored bundle";
  return "";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) {
    g_cli_bin = argv[1];
  } else if (const char* bin = std::getenv("CERTRL_BIN")) {
    g_cli_bin = bin;
  }

  struct Criterion {
    const char* name;
    std::function<std::string(std::string*)> body;
  };
  const auto plain = [](std::string (*f)()) {
    return [f](std::string*) { return f(); };
  };
  const std::vector<Criterion> criteria = {
      {"worked example: exact interval and sampled estimate",
       plain(check_worked_example_interval)},
      {"worked example: fixed adversary traces",
       plain(check_worked_example_rows)},
      {"interval propagation contains sampled network outputs",
       plain(check_interval_containment)},
      {"certificates lower bound adversarial episodes",
       plain(check_certificate_soundness)},
      {"gradients match finite differences", plain(check_gradients)},
      {"bounds monotone in radius and horizon trend",
       plain(check_monotonicity)},
      {"regularized training improves the certified floor",
       check_training_efficacy},
      {"bound evaluator: worked correction and collapse cases",
       plain(check_bound_evaluator)},
      {"attacked returns never undercut the certified floor",
       plain(check_attack_dominance)},
      {"pipeline reproducibility and single-bit tamper detection",
       plain(check_pipeline_reproducibility)},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    std::string err;
    try {
      err = criteria[i].body(&detail);
    } catch (const std::exception& e) {
      err = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
    if (err.empty()) {
      std::printf("[PASS] %02zu %s%s%s (%.1f s)\n", i + 1, criteria[i].name,
                  detail.empty() ? "" : ": ", detail.c_str(), secs);
    } else {
      ++failed;
      std::printf("[FAIL] %02zu %s: %s (%.1f s)\n", i + 1, criteria[i].name,
                  err.c_str(), secs);
    }
    std::fflush(stdout);
  }
  std::printf("%zu of %zu acceptance checks passed\n",
              criteria.size() - failed, criteria.size());
  return failed;
}
