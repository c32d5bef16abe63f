#include "certrl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "certrl/hash.hpp"

namespace certrl {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

constexpr double kLogSigmaMin = -10.0;
constexpr double kLogSigmaMax = 3.0;

// Gaussian negative log-likelihood of one minibatch (constants dropped),
// accumulating parameter and log-sigma gradients. Targets are the state
// residual s' - s stacked with the reward.
double nll_batch(GaussianModel& model, const TransitionDataset& data,
                 const std::vector<std::size_t>& idx, ParamGradient* grad,
                 Eigen::VectorXd* log_sigma_grad) {
  const int k = model.state_dim;
  const Eigen::ArrayXd inv_var = (-2.0 * model.log_sigma).array().exp();
  double loss = 0.0;
  for (std::size_t row : idx) {
    const Transition& tr = data[row];
    Eigen::VectorXd in(model.state_dim + model.action_dim);
    in << tr.s, tr.a;
    Eigen::VectorXd y(k + 1);
    y << (tr.s_next - tr.s), tr.r;

    MlpCache cache;
    const Eigen::VectorXd mu = model.mean_net.forward(in, &cache);
    const Eigen::ArrayXd diff = (mu - y).array();
    loss += model.log_sigma.sum() + 0.5 * (diff.square() * inv_var).sum();

    const Eigen::VectorXd upstream = (diff * inv_var).matrix();
    model.mean_net.backward(cache, upstream, grad);
    *log_sigma_grad += (1.0 - diff.square() * inv_var).matrix();
  }
  const double inv_n = 1.0 / static_cast<double>(idx.size());
  grad->scale(inv_n);
  *log_sigma_grad *= inv_n;
  return loss * inv_n;
}

}  // namespace

TransitionDataset::TransitionDataset(int state_dim, int action_dim,
                                     std::size_t capacity)
    : state_dim_(state_dim), action_dim_(action_dim), capacity_(capacity) {
  if (state_dim <= 0 || action_dim <= 0 || capacity == 0)
    throw std::invalid_argument("TransitionDataset: bad dimensions/capacity");
}

void TransitionDataset::append(Transition t) {
  if (t.s.size() != state_dim_ || t.s_next.size() != state_dim_ ||
      t.a.size() != action_dim_)
    throw std::invalid_argument("TransitionDataset: dimension mismatch");
  if (!t.s.allFinite() || !t.a.allFinite() || !t.s_next.allFinite() ||
      !std::isfinite(t.r))
    throw std::invalid_argument("TransitionDataset: non-finite transition");
  if (data_.size() == capacity_) data_.pop_front();
  data_.push_back(std::move(t));
}

void TransitionDataset::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  out << "certrl transitions 1 " << state_dim_ << " " << action_dim_ << "\n";
  for (const Transition& t : data_) {
    std::string line;
    for (int i = 0; i < state_dim_; ++i) line += fmt(t.s[i]) + " ";
    for (int i = 0; i < action_dim_; ++i) line += fmt(t.a[i]) + " ";
    for (int i = 0; i < state_dim_; ++i) line += fmt(t.s_next[i]) + " ";
    line += fmt(t.r);
    out << line << "\n";
  }
  if (!out) throw std::runtime_error("dataset write failed: " + path);
}

TransitionDataset TransitionDataset::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read dataset: " + path);
  std::string word, fmt_tag;
  int version = 0, k = 0, m = 0;
  if (!(in >> word >> fmt_tag >> version >> k >> m) || word != "certrl" ||
      fmt_tag != "transitions" || version != 1 || k <= 0 || m <= 0)
    throw std::runtime_error("dataset: bad header in " + path);
  TransitionDataset data(k, m);
  while (true) {
    Transition t;
    t.s.resize(k);
    t.a.resize(m);
    t.s_next.resize(k);
    if (!(in >> t.s[0])) break;  // clean EOF before a new record
    for (int i = 1; i < k; ++i)
      if (!(in >> t.s[i])) throw std::runtime_error("dataset: truncated record");
    for (int i = 0; i < m; ++i)
      if (!(in >> t.a[i])) throw std::runtime_error("dataset: truncated record");
    for (int i = 0; i < k; ++i)
      if (!(in >> t.s_next[i]))
        throw std::runtime_error("dataset: truncated record");
    if (!(in >> t.r)) throw std::runtime_error("dataset: truncated record");
    data.append(std::move(t));
  }
  return data;
}

Eigen::VectorXd GaussianPolicy::act_mean(const Eigen::VectorXd& s) const {
  return mean_net.forward(s);
}

Eigen::VectorXd GaussianPolicy::act_sample(const Eigen::VectorXd& s,
                                           RngStream& rng) const {
  return act_mean(s) +
         noise_std().cwiseProduct(rng.normal_vec(action_dim()));
}

Box GaussianPolicy::act_mean_abs(const Box& s_obs) const {
  return mean_net.forward_abs(s_obs);
}

std::string GaussianPolicy::serialize() const {
  std::string out = "certrl policy 1\n";
  out += "action_dim " + std::to_string(action_dim()) + "\nlog_sigma";
  for (Eigen::Index i = 0; i < log_sigma.size(); ++i)
    out += " " + fmt(log_sigma[i]);
  out += "\n" + mean_net.serialize();
  return out;
}

GaussianPolicy GaussianPolicy::deserialize(std::istream& in) {
  std::string line, word;
  if (!std::getline(in, line) || line != "certrl policy 1")
    throw std::runtime_error("policy checkpoint: bad magic line");
  int m = 0;
  if (!(in >> word >> m) || word != "action_dim" || m <= 0)
    throw std::runtime_error("policy checkpoint: bad action_dim");
  if (!(in >> word) || word != "log_sigma")
    throw std::runtime_error("policy checkpoint: missing log_sigma");
  GaussianPolicy p;
  p.log_sigma.resize(m);
  for (int i = 0; i < m; ++i)
    if (!(in >> p.log_sigma[i]))
      throw std::runtime_error("policy checkpoint: truncated log_sigma");
  std::getline(in, line);  // finish the log_sigma line
  p.mean_net = Mlp::deserialize(in);
  if (p.mean_net.output_dim() != m)
    throw std::runtime_error("policy checkpoint: net/log_sigma dim mismatch");
  return p;
}

void GaussianPolicy::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write policy: " + path);
  out << serialize();
  if (!out) throw std::runtime_error("policy write failed: " + path);
}

GaussianPolicy GaussianPolicy::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read policy: " + path);
  return deserialize(in);
}

std::uint64_t GaussianPolicy::content_hash() const {
  return fnv1a64(serialize());
}

GaussianPolicy GaussianPolicy::random(int state_dim, int action_dim,
                                      const std::vector<int>& hidden,
                                      double init_sigma, RngStream& rng) {
  std::vector<int> dims;
  dims.push_back(state_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(action_dim);
  GaussianPolicy p;
  p.mean_net = Mlp::random(dims, Activation::tanh, Activation::identity, rng);
  p.log_sigma =
      Eigen::VectorXd::Constant(action_dim, std::log(init_sigma));
  return p;
}

std::pair<Eigen::VectorXd, double> GaussianModel::predict(
    const Eigen::VectorXd& s, const Eigen::VectorXd& a) const {
  Eigen::VectorXd in(state_dim + action_dim);
  in << s, a;
  const Eigen::VectorXd out = mean_net.forward(in);
  return {s + out.head(state_dim), out[state_dim]};
}

std::pair<Box, Box> GaussianModel::predict_abs(const Box& s,
                                               const Box& a) const {
  const Box out = mean_net.forward_abs(concat(s, a));
  return {add(segment(out, 0, state_dim), s), segment(out, state_dim, 1)};
}

std::string GaussianModel::serialize() const {
  std::string out = "certrl model 1\n";
  out += "dims " + std::to_string(state_dim) + " " +
         std::to_string(action_dim) + "\nlog_sigma";
  for (Eigen::Index i = 0; i < log_sigma.size(); ++i)
    out += " " + fmt(log_sigma[i]);
  out += "\nerror " + fmt(eps_e) + " " + fmt(delta_e) + " " + fmt(d_e) + "\n";
  out += mean_net.serialize();
  return out;
}

GaussianModel GaussianModel::deserialize(std::istream& in) {
  std::string line, word;
  if (!std::getline(in, line) || line != "certrl model 1")
    throw std::runtime_error("model checkpoint: bad magic line");
  GaussianModel m;
  if (!(in >> word >> m.state_dim >> m.action_dim) || word != "dims" ||
      m.state_dim <= 0 || m.action_dim <= 0)
    throw std::runtime_error("model checkpoint: bad dims");
  if (!(in >> word) || word != "log_sigma")
    throw std::runtime_error("model checkpoint: missing log_sigma");
  m.log_sigma.resize(m.state_dim + 1);
  for (int i = 0; i < m.state_dim + 1; ++i)
    if (!(in >> m.log_sigma[i]))
      throw std::runtime_error("model checkpoint: truncated log_sigma");
  if (!(in >> word >> m.eps_e >> m.delta_e >> m.d_e) || word != "error")
    throw std::runtime_error("model checkpoint: bad error record");
  std::getline(in, line);
  m.mean_net = Mlp::deserialize(in);
  if (m.mean_net.input_dim() != m.state_dim + m.action_dim ||
      m.mean_net.output_dim() != m.state_dim + 1)
    throw std::runtime_error("model checkpoint: net dims mismatch");
  return m;
}

void GaussianModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model: " + path);
  out << serialize();
  if (!out) throw std::runtime_error("model write failed: " + path);
}

GaussianModel GaussianModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read model: " + path);
  return deserialize(in);
}

std::uint64_t GaussianModel::content_hash() const {
  return fnv1a64(serialize());
}

Adam::Adam(const Mlp& net, int aux_dim, double lr)
    : lr_(lr),
      m_(ParamGradient::zeros_like(net)),
      v_(ParamGradient::zeros_like(net)),
      m_aux_(Eigen::VectorXd::Zero(aux_dim)),
      v_aux_(Eigen::VectorXd::Zero(aux_dim)) {}

void Adam::step(Mlp& net, Eigen::VectorXd& aux, const ParamGradient& grad,
                const Eigen::VectorXd& aux_grad) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto update = [&](double* p, double* m, double* v, const double* g,
                          Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= (lr_ / bc1) * m[i] / (std::sqrt(v[i] / bc2) + eps_);
    }
  };
  auto& layers = net.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight.data(), m_.weight[l].data(), v_.weight[l].data(),
           grad.weight[l].data(), layers[l].weight.size());
    update(layers[l].bias.data(), m_.bias[l].data(), v_.bias[l].data(),
           grad.bias[l].data(), layers[l].bias.size());
  }
  if (aux.size() > 0)
    update(aux.data(), m_aux_.data(), v_aux_.data(), aux_grad.data(),
           aux.size());
}

double fit_model_inplace(GaussianModel& model, Adam& opt,
                         const TransitionDataset& data, int epochs,
                         int batch_size, RngStream& rng) {
  if (data.empty()) throw std::invalid_argument("fit_model: empty dataset");
  const std::size_t batch =
      std::min<std::size_t>(data.size(), static_cast<std::size_t>(batch_size));
  const std::size_t steps_per_epoch =
      (data.size() + batch - 1) / batch;
  double epoch_loss = 0.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      std::vector<std::size_t> idx(batch);
      for (auto& i : idx) i = rng.index(data.size());
      ParamGradient grad = ParamGradient::zeros_like(model.mean_net);
      Eigen::VectorXd ls_grad = Eigen::VectorXd::Zero(model.log_sigma.size());
      const double loss = nll_batch(model, data, idx, &grad, &ls_grad);
      if (!std::isfinite(loss))
        throw std::runtime_error(
            "model fit diverged: non-finite likelihood at epoch " +
            std::to_string(epoch));
      opt.step(model.mean_net, model.log_sigma, grad, ls_grad);
      model.log_sigma = model.log_sigma.cwiseMax(kLogSigmaMin).cwiseMin(kLogSigmaMax);
      epoch_loss += loss;
    }
    epoch_loss /= static_cast<double>(steps_per_epoch);
  }
  return epoch_loss;
}

GaussianModel fit_model(const TransitionDataset& data,
                        const ModelFitConfig& cfg, RngStream& rng) {
  if (data.empty()) throw std::invalid_argument("fit_model: empty dataset");
  GaussianModel model;
  model.state_dim = data.state_dim();
  model.action_dim = data.action_dim();
  std::vector<int> dims;
  dims.push_back(model.state_dim + model.action_dim);
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(model.state_dim + 1);
  model.mean_net =
      Mlp::random(dims, cfg.activation, Activation::identity, rng);
  model.log_sigma = Eigen::VectorXd::Constant(model.state_dim + 1,
                                              std::log(cfg.init_sigma));
  Adam opt(model.mean_net, static_cast<int>(model.log_sigma.size()), cfg.lr);
  fit_model_inplace(model, opt, data, cfg.epochs, cfg.batch_size, rng);
  return model;
}

ModelError measure_model_error(const GaussianModel& model,
                               const TransitionDataset& heldout,
                               double delta_e) {
  if (heldout.empty())
    throw std::invalid_argument("measure_model_error: empty held-out set");
  if (!(delta_e >= 0.0 && delta_e < 1.0))
    throw std::invalid_argument("measure_model_error: delta_e must be in [0,1)");
  std::vector<double> residuals;
  residuals.reserve(heldout.size());
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    const Transition& t = heldout[i];
    const auto [next_mean, r_mean] = model.predict(t.s, t.a);
    (void)r_mean;
    residuals.push_back((t.s_next - next_mean).lpNorm<Eigen::Infinity>());
  }
  std::sort(residuals.begin(), residuals.end());
  const std::size_t n = residuals.size();
  // Nearest-rank quantile: the ceil((1 - delta) n)-th smallest residual.
  const auto rank = static_cast<std::size_t>(
      std::ceil((1.0 - delta_e) * static_cast<double>(n)));
  ModelError err;
  err.eps_e = residuals[std::max<std::size_t>(rank, 1) - 1];
  err.d_e = residuals.back();
  return err;
}

std::pair<Eigen::VectorXd, double> EnvDynamics::predict(
    const Eigen::VectorXd& s, const Eigen::VectorXd& a) const {
  return {env_.mean_dynamics(s, a), env_.reward(s, a)};
}

std::pair<Box, Box> EnvDynamics::predict_abs(const Box& s, const Box& a) const {
  return {env_.mean_dynamics_abs(s, a), env_.reward_abs(s, a)};
}

ModelDynamics::ModelDynamics(GaussianModel model) : model_(std::move(model)) {}

EnvDynamics::EnvDynamics(Mdp env) : env_(std::move(env)) {
  noise_std_.resize(env_.state_dim + 1);
  noise_std_ << env_.noise_std, 0.0;  // exact rewards carry no noise
}

std::uint64_t EnvDynamics::content_hash() const {
  return fnv1a64("certrl env " + env_.name);
}

}  // namespace certrl
