#include "certrl/certifier.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "certrl/hash.hpp"

namespace certrl {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Reads one whitespace-delimited token as a double. istream's own extractor
// rejects "inf"/"nan", which exploded traces legitimately contain, so route
// through strtod instead.
double read_double(std::istream& in, const char* what) {
  std::string tok;
  if (!(in >> tok))
    throw std::runtime_error(std::string("trace: missing value for ") + what);
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size())
    throw std::runtime_error(std::string("trace: bad number '") + tok +
                             "' for " + what);
  return v;
}

Eigen::VectorXd read_vec(std::istream& in, int n, const char* what) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = read_double(in, what);
  return v;
}

void expect_word(std::istream& in, const char* word) {
  std::string tok;
  if (!(in >> tok) || tok != word)
    throw std::runtime_error(std::string("trace: expected '") + word +
                             "', got '" + tok + "'");
}

std::string vec_str(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ' ';
    out += fmt(v[i]);
  }
  return out;
}

std::string box_str(const Box& b) {
  return vec_str(b.center) + " " + vec_str(b.deviation);
}

Box read_box(std::istream& in, int n, const char* what) {
  Eigen::VectorXd c = read_vec(in, n, what);
  Eigen::VectorXd d = read_vec(in, n, what);
  return Box(std::move(c), std::move(d));
}

// stored must be a (weak) superset of recomputed in every dimension; any NaN
// bound fails.
bool box_covers(const Box& stored, const Box& recomputed) {
  if (stored.dim() != recomputed.dim()) return false;
  const Eigen::VectorXd sl = stored.lower(), su = stored.upper();
  const Eigen::VectorXd rl = recomputed.lower(), ru = recomputed.upper();
  for (int i = 0; i < stored.dim(); ++i)
    if (!(sl[i] <= rl[i] && ru[i] <= su[i])) return false;
  return true;
}

std::uint64_t parse_hex64(const std::string& s, const char* what) {
  char* end = nullptr;
  const std::uint64_t v = std::strtoull(s.c_str(), &end, 16);
  if (end != s.c_str() + s.size())
    throw std::runtime_error(std::string("trace: bad hash for ") + what);
  return v;
}

}  // namespace

bool interval_exploded(const Box& b) {
  if (!b.finite()) return true;
  return b.lower().cwiseAbs().maxCoeff() > kBoundExplosionLimit ||
         b.upper().cwiseAbs().maxCoeff() > kBoundExplosionLimit;
}

double AbstractTrace::lower_bound() const {
  if (!certifiable) return std::nan("");
  return total_reward.lower()[0];
}

NoiseRecord NoiseRecord::zeros(int T, int action_dim, int state_dim) {
  NoiseRecord n;
  n.pi.assign(T, Eigen::VectorXd::Zero(action_dim));
  n.env.assign(T, Eigen::VectorXd::Zero(state_dim + 1));
  return n;
}

NoiseRecord NoiseRecord::from_trace(const AbstractTrace& trace) {
  NoiseRecord n;
  for (const TraceStep& s : trace.steps) {
    n.pi.push_back(s.noise_pi);
    n.env.push_back(s.noise_env);
  }
  return n;
}

AbstractTrace abstract_rollout(const GaussianPolicy& policy,
                               const AbstractDynamics& dyn,
                               const Eigen::VectorXd& s0,
                               const PerturbationSpec& spec, int T,
                               const NoiseRecord& noise) {
  const int k = dyn.state_dim();
  const int m = dyn.action_dim();
  if (s0.size() != k)
    throw std::invalid_argument("abstract_rollout: s0 dimension mismatch");
  if (policy.state_dim() != k || policy.action_dim() != m)
    throw std::invalid_argument("abstract_rollout: policy/dynamics mismatch");
  if (T < 1) throw std::invalid_argument("abstract_rollout: horizon must be >= 1");
  if (static_cast<int>(noise.pi.size()) < T ||
      static_cast<int>(noise.env.size()) < T)
    throw std::invalid_argument("abstract_rollout: noise record too short");

  AbstractTrace tr;
  tr.meta.reward_mode = dyn.reward_mode();
  tr.meta.epsilon = spec.epsilon;
  tr.meta.eps_e = dyn.eps_e();
  tr.meta.delta_e = dyn.delta_e();
  tr.meta.horizon = T;
  tr.meta.state_dim = k;
  tr.meta.action_dim = m;
  tr.meta.policy_hash = policy.content_hash();
  tr.meta.dynamics_hash = dyn.content_hash();
  tr.s0 = s0;

  Box s = from_point(s0);
  Box total = from_point(Eigen::VectorXd::Zero(1));
  for (int i = 0; i < T; ++i) {
    if (noise.pi[i].size() != m || noise.env[i].size() != k + 1)
      throw std::invalid_argument("abstract_rollout: noise dimension mismatch");
    TraceStep step;
    step.s_original = s;
    step.s_obs = widen(s, spec.epsilon);
    step.action = add(policy.act_mean_abs(step.s_obs), noise.pi[i]);
    auto [s_next, r] = dyn.predict_abs(s, step.action);
    s_next = add(s_next, Eigen::VectorXd(noise.env[i].head(k)));
    s_next = widen(s_next, dyn.eps_e());
    r = add(r, Eigen::VectorXd(noise.env[i].tail(1)));
    step.reward = r;
    step.noise_pi = noise.pi[i];
    step.noise_env = noise.env[i];
    total = add(total, r);
    s = std::move(s_next);
    tr.steps.push_back(std::move(step));
    if (interval_exploded(s) || interval_exploded(tr.steps.back().reward) ||
        interval_exploded(total)) {
      tr.certifiable = false;
      tr.failed_step = i;
      break;
    }
  }
  tr.total_reward = total;
  return tr;
}

AbstractTrace abstract_rollout(const GaussianPolicy& policy,
                               const AbstractDynamics& dyn,
                               const Eigen::VectorXd& s0,
                               const PerturbationSpec& spec, int T,
                               RngStream& rng) {
  const int k = dyn.state_dim();
  const int m = dyn.action_dim();
  NoiseRecord noise;
  const Eigen::VectorXd dyn_sigma = dyn.noise_std();
  for (int i = 0; i < T; ++i) {
    if (policy.deterministic_eval)
      noise.pi.push_back(Eigen::VectorXd::Zero(m));
    else
      noise.pi.push_back(
          policy.noise_std().cwiseProduct(rng.normal_vec(m)).eval());
    noise.env.push_back(dyn_sigma.cwiseProduct(rng.normal_vec(k + 1)).eval());
  }
  return abstract_rollout(policy, dyn, s0, spec, T, noise);
}

void CertConfig::validate() const {
  if (num_samples < 1) throw std::invalid_argument("cert: need num_samples >= 1");
  if (horizon < 1) throw std::invalid_argument("cert: need horizon >= 1");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("cert: delta must be in (0, 1)");
  if (threads < 1) throw std::invalid_argument("cert: need threads >= 1");
}

WcarResult wcar(const GaussianPolicy& policy, const AbstractDynamics& dyn,
                const std::function<Eigen::VectorXd(RngStream&)>& init_sampler,
                const PerturbationSpec& spec, const CertConfig& cfg,
                std::uint64_t seed) {
  cfg.validate();
  const int n = cfg.num_samples;
  WcarResult res;
  res.traces.resize(n);
  res.lower_bounds.resize(n);

  const auto run =
      [&](int begin, int end) {
        for (int t = begin; t < end; ++t) {
          RngStream stream =
              RngStream::derive(seed, static_cast<std::uint64_t>(t));
          const Eigen::VectorXd s0 = init_sampler(stream);
          AbstractTrace tr =
              abstract_rollout(policy, dyn, s0, spec, cfg.horizon, stream);
          tr.meta.seed = seed;
          tr.meta.sample_index = static_cast<std::uint64_t>(t);
          res.lower_bounds[t] = tr.lower_bound();
          res.traces[t] = std::move(tr);
        }
      };

  const int workers = std::min(cfg.threads, n);
  if (workers <= 1) {
    run(0, n);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back(run, w * chunk, std::min(n, (w + 1) * chunk));
    for (auto& th : pool) th.join();
  }

  double sum = 0.0;
  for (int t = 0; t < n; ++t) {
    sum += res.lower_bounds[t];
    if (!res.traces[t].certifiable) ++res.num_not_certifiable;
  }
  res.wcar = sum / n;
  double sq = 0.0;
  for (double lb : res.lower_bounds) sq += (lb - res.wcar) * (lb - res.wcar);
  res.variance = (n > 1) ? sq / (n - 1) : 0.0;
  return res;
}

double horizon_error_factor(double x, int T) {
  if (T < 1) throw std::invalid_argument("horizon_error_factor: T must be >= 1");
  const double h = 1.0 - x;
  if (std::abs(h) < 1e-2) {
    // Binomial series of (x^T + (1-x)T - 1) / (1-x)^2 around x = 1:
    // sum_{j=2}^{T} C(T, j) (-h)^{j-2}. At x = 1 this is T(T-1)/2.
    double sum = 0.0;
    double coeff = 0.5 * T * (T - 1);  // C(T, 2)
    double hp = 1.0;
    for (int j = 2; j <= T; ++j) {
      sum += coeff * hp;
      hp *= -h;
      coeff *= static_cast<double>(T - j) / static_cast<double>(j + 1);
    }
    return sum;
  }
  return (std::pow(x, T) + h * static_cast<double>(T) - 1.0) / (h * h);
}

double theorem1_bound(double wcar_mean, double wcar_variance, int num_samples,
                      double delta, double delta_e, int horizon,
                      double lip_dynamics, double lip_policy,
                      double lip_reward, double d_e) {
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("theorem1_bound: delta must be in (0, 1)");
  if (!(delta_e >= 0.0 && delta_e <= 1.0))
    throw std::invalid_argument("theorem1_bound: delta_e must be in [0, 1]");
  if (num_samples < 1 || horizon < 1)
    throw std::invalid_argument("theorem1_bound: need N >= 1 and T >= 1");
  if (wcar_variance < 0.0)
    throw std::invalid_argument("theorem1_bound: negative variance");
  if (lip_dynamics < 0.0 || lip_policy < 0.0 || lip_reward < 0.0 || d_e < 0.0)
    throw std::invalid_argument("theorem1_bound: negative constant");

  const double sampling_term =
      std::sqrt(wcar_variance / (static_cast<double>(num_samples) * delta));
  const double miss_prob =
      1.0 - std::pow(1.0 - delta_e, static_cast<double>(horizon));
  const double correction =
      miss_prob * lip_reward * (1.0 + lip_policy) * d_e *
      horizon_error_factor(lip_dynamics * lip_policy, horizon);
  return wcar_mean - sampling_term - correction;
}

bool verify_certificate(const AbstractTrace& trace,
                        const GaussianPolicy& policy,
                        const AbstractDynamics& dyn, std::string* why) {
  const auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };

  if (trace.meta.policy_hash != policy.content_hash())
    return fail("policy hash does not match the supplied checkpoint");
  if (trace.meta.dynamics_hash != dyn.content_hash())
    return fail("dynamics hash does not match the supplied model");
  if (trace.meta.reward_mode != dyn.reward_mode())
    return fail("reward mode mismatch");
  if (trace.meta.eps_e != dyn.eps_e() || trace.meta.delta_e != dyn.delta_e())
    return fail("model error record mismatch");
  if (trace.meta.state_dim != dyn.state_dim() ||
      trace.meta.action_dim != dyn.action_dim())
    return fail("dimension mismatch");
  if (trace.steps.empty()) return fail("empty trace");
  if (trace.certifiable &&
      static_cast<int>(trace.steps.size()) != trace.meta.horizon)
    return fail("certifiable trace does not cover its stated horizon");

  AbstractTrace re;
  try {
    re = abstract_rollout(policy, dyn, trace.s0,
                          PerturbationSpec(trace.meta.epsilon),
                          static_cast<int>(trace.steps.size()),
                          NoiseRecord::from_trace(trace));
  } catch (const std::exception& e) {
    return fail(std::string("replay failed: ") + e.what());
  }

  if (re.certifiable != trace.certifiable ||
      re.failed_step != trace.failed_step)
    return fail("replay certifiability disagrees with the stored trace");

  const int checked_steps = trace.certifiable
                                ? static_cast<int>(trace.steps.size())
                                : trace.failed_step;
  for (int i = 0; i < checked_steps; ++i) {
    const TraceStep& a = trace.steps[i];
    const TraceStep& b = re.steps[i];
    if (!box_covers(a.s_original, b.s_original))
      return fail("step " + std::to_string(i) + ": stored state box does not cover replay");
    if (!box_covers(a.s_obs, b.s_obs))
      return fail("step " + std::to_string(i) + ": stored observation box does not cover replay");
    if (!box_covers(a.action, b.action))
      return fail("step " + std::to_string(i) + ": stored action box does not cover replay");
    if (!box_covers(a.reward, b.reward))
      return fail("step " + std::to_string(i) + ": stored reward box does not cover replay");
  }

  if (trace.certifiable) {
    // The accumulated interval must be exactly the sum of the step rewards
    // and must cover the replayed total.
    Box total = from_point(Eigen::VectorXd::Zero(1));
    for (const TraceStep& s : trace.steps) total = add(total, s.reward);
    if (total.center[0] != trace.total_reward.center[0] ||
        total.deviation[0] != trace.total_reward.deviation[0])
      return fail("accumulated reward is not the sum of step rewards");
    if (!box_covers(trace.total_reward, re.total_reward))
      return fail("stored reward interval does not cover replay");
  }
  return true;
}

std::string serialize_trace(const AbstractTrace& trace) {
  std::string out = "certrl trace 1\n";
  out += "reward_mode " + trace.meta.reward_mode + "\n";
  out += "epsilon " + fmt(trace.meta.epsilon) + "\n";
  out += "eps_e " + fmt(trace.meta.eps_e) + "\n";
  out += "delta_e " + fmt(trace.meta.delta_e) + "\n";
  out += "horizon " + std::to_string(trace.meta.horizon) + "\n";
  out += "dims " + std::to_string(trace.meta.state_dim) + " " +
         std::to_string(trace.meta.action_dim) + "\n";
  out += "policy_hash " + hex64(trace.meta.policy_hash) + "\n";
  out += "dynamics_hash " + hex64(trace.meta.dynamics_hash) + "\n";
  out += "seed " + std::to_string(trace.meta.seed) + "\n";
  out += "sample " + std::to_string(trace.meta.sample_index) + "\n";
  out += "certifiable " + std::string(trace.certifiable ? "1" : "0") + "\n";
  out += "failed_step " + std::to_string(trace.failed_step) + "\n";
  out += "s0 " + vec_str(trace.s0) + "\n";
  out += "steps " + std::to_string(trace.steps.size()) + "\n";
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const TraceStep& s = trace.steps[i];
    out += "step " + std::to_string(i) + "\n";
    out += "s_original " + box_str(s.s_original) + "\n";
    out += "s_obs " + box_str(s.s_obs) + "\n";
    out += "action " + box_str(s.action) + "\n";
    out += "reward " + box_str(s.reward) + "\n";
    out += "noise_pi " + vec_str(s.noise_pi) + "\n";
    out += "noise_env " + vec_str(s.noise_env) + "\n";
  }
  out += "total " + box_str(trace.total_reward) + "\n";
  out += "hash " + hex64(fnv1a64(out)) + "\n";
  return out;
}

AbstractTrace parse_trace(const std::string& text) {
  const auto nl_pos = text.rfind("\nhash ");
  if (nl_pos == std::string::npos)
    throw std::runtime_error("trace: missing content hash line");
  const auto hash_pos = nl_pos + 1;
  {
    std::istringstream tail(text.substr(hash_pos));
    std::string word, hex;
    tail >> word >> hex;
    const std::uint64_t stored = parse_hex64(hex, "content hash");
    const std::uint64_t actual = fnv1a64(text.substr(0, hash_pos));
    if (stored != actual)
      throw std::runtime_error(
          "trace: content hash mismatch (file corrupted or edited)");
  }

  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "certrl trace 1")
    throw std::runtime_error("trace: bad magic line");

  AbstractTrace tr;
  std::string word;
  expect_word(in, "reward_mode");
  in >> tr.meta.reward_mode;
  expect_word(in, "epsilon");
  tr.meta.epsilon = read_double(in, "epsilon");
  expect_word(in, "eps_e");
  tr.meta.eps_e = read_double(in, "eps_e");
  expect_word(in, "delta_e");
  tr.meta.delta_e = read_double(in, "delta_e");
  expect_word(in, "horizon");
  in >> tr.meta.horizon;
  expect_word(in, "dims");
  in >> tr.meta.state_dim >> tr.meta.action_dim;
  if (!in || tr.meta.state_dim <= 0 || tr.meta.action_dim <= 0 ||
      tr.meta.horizon <= 0)
    throw std::runtime_error("trace: bad header dimensions");
  const int k = tr.meta.state_dim;
  const int m = tr.meta.action_dim;
  expect_word(in, "policy_hash");
  in >> word;
  tr.meta.policy_hash = parse_hex64(word, "policy_hash");
  expect_word(in, "dynamics_hash");
  in >> word;
  tr.meta.dynamics_hash = parse_hex64(word, "dynamics_hash");
  expect_word(in, "seed");
  in >> tr.meta.seed;
  expect_word(in, "sample");
  in >> tr.meta.sample_index;
  expect_word(in, "certifiable");
  int cert = 0;
  in >> cert;
  tr.certifiable = cert != 0;
  expect_word(in, "failed_step");
  in >> tr.failed_step;
  expect_word(in, "s0");
  tr.s0 = read_vec(in, k, "s0");
  expect_word(in, "steps");
  std::size_t count = 0;
  in >> count;
  if (!in) throw std::runtime_error("trace: bad step count");
  for (std::size_t i = 0; i < count; ++i) {
    expect_word(in, "step");
    std::size_t idx = 0;
    in >> idx;
    if (!in || idx != i) throw std::runtime_error("trace: step index mismatch");
    TraceStep s;
    expect_word(in, "s_original");
    s.s_original = read_box(in, k, "s_original");
    expect_word(in, "s_obs");
    s.s_obs = read_box(in, k, "s_obs");
    expect_word(in, "action");
    s.action = read_box(in, m, "action");
    expect_word(in, "reward");
    s.reward = read_box(in, 1, "reward");
    expect_word(in, "noise_pi");
    s.noise_pi = read_vec(in, m, "noise_pi");
    expect_word(in, "noise_env");
    s.noise_env = read_vec(in, k + 1, "noise_env");
    tr.steps.push_back(std::move(s));
  }
  expect_word(in, "total");
  tr.total_reward = read_box(in, 1, "total");
  return tr;
}

void save_trace(const AbstractTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trace: " + path);
  out << serialize_trace(trace);
  if (!out) throw std::runtime_error("trace write failed: " + path);
}

AbstractTrace load_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read trace: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_trace(buf.str());
}

}  // namespace certrl
