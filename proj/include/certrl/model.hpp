#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "certrl/box.hpp"
#include "certrl/env.hpp"
#include "certrl/mlp.hpp"
#include "certrl/rng.hpp"

namespace certrl {

struct Transition {
  Eigen::VectorXd s;
  Eigen::VectorXd a;
  Eigen::VectorXd s_next;
  double r = 0.0;
};

// Append-only transition buffer with FIFO eviction at capacity. Persisted as
// one transition per line: k state values, m action values, k next-state
// values, then the reward, space-separated with 17 significant digits.
class TransitionDataset {
 public:
  TransitionDataset(int state_dim, int action_dim,
                    std::size_t capacity = 1000000);

  void append(Transition t);
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  const Transition& operator[](std::size_t i) const { return data_[i]; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  std::size_t capacity() const { return capacity_; }

  void save(const std::string& path) const;
  static TransitionDataset load(const std::string& path);

 private:
  int state_dim_;
  int action_dim_;
  std::size_t capacity_;
  std::deque<Transition> data_;
};

// Stochastic policy a = mean_net(s) + exp(log_sigma) .* e with diagonal,
// state-independent exploration noise. Evaluation and certification use the
// mean action unless deterministic_eval is cleared.
struct GaussianPolicy {
  Mlp mean_net;
  Eigen::VectorXd log_sigma;
  bool deterministic_eval = true;

  int state_dim() const { return mean_net.input_dim(); }
  int action_dim() const { return mean_net.output_dim(); }
  Eigen::VectorXd noise_std() const {
    return log_sigma.array().exp().matrix();
  }

  Eigen::VectorXd act_mean(const Eigen::VectorXd& s) const;
  Eigen::VectorXd act_sample(const Eigen::VectorXd& s, RngStream& rng) const;
  Box act_mean_abs(const Box& s_obs) const;

  double lipschitz_upper() const { return mean_net.lipschitz_upper(); }

  std::string serialize() const;
  static GaussianPolicy deserialize(std::istream& in);
  void save(const std::string& path) const;
  static GaussianPolicy load(const std::string& path);
  std::uint64_t content_hash() const;

  static GaussianPolicy random(int state_dim, int action_dim,
                               const std::vector<int>& hidden,
                               double init_sigma, RngStream& rng);
};

// Learned dynamics model: mean_net maps (s, a) to (delta_s_mean, r_mean);
// the next-state mean is s + delta_s_mean. Output noise is Gaussian with
// diagonal, input-independent covariance exp(2 log_sigma) over the k+1
// outputs. eps_e/d_e are measured on held-out state residuals.
struct GaussianModel {
  Mlp mean_net;
  Eigen::VectorXd log_sigma;
  int state_dim = 0;
  int action_dim = 0;
  double eps_e = 0.0;
  double delta_e = 0.0;
  double d_e = 0.0;

  // Mean next state and mean reward.
  std::pair<Eigen::VectorXd, double> predict(const Eigen::VectorXd& s,
                                             const Eigen::VectorXd& a) const;
  // Abstract counterpart: boxes for next state and reward (mean only; noise
  // and error widening are the rollout's responsibility).
  std::pair<Box, Box> predict_abs(const Box& s, const Box& a) const;

  Eigen::VectorXd noise_std() const {
    return log_sigma.array().exp().matrix();
  }

  std::string serialize() const;
  static GaussianModel deserialize(std::istream& in);
  void save(const std::string& path) const;
  static GaussianModel load(const std::string& path);
  std::uint64_t content_hash() const;
};

struct ModelFitConfig {
  std::vector<int> hidden = {32, 32};
  Activation activation = Activation::tanh;
  int epochs = 150;
  int batch_size = 64;
  double lr = 1e-3;
  double init_sigma = 0.3;
};

// Adam optimizer over an Mlp plus one auxiliary vector (the log-sigma head).
class Adam {
 public:
  Adam(const Mlp& net, int aux_dim, double lr);

  void step(Mlp& net, Eigen::VectorXd& aux, const ParamGradient& grad,
            const Eigen::VectorXd& aux_grad);
  double lr() const { return lr_; }

 private:
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  ParamGradient m_, v_;
  Eigen::VectorXd m_aux_, v_aux_;
};

// Maximum-likelihood fit of a fresh model on the dataset (Gaussian NLL with
// the diagonal state-independent covariance). Throws on empty data or a
// non-finite loss.
GaussianModel fit_model(const TransitionDataset& data,
                        const ModelFitConfig& cfg, RngStream& rng);

// Continue training an existing model in place; used by the training loop to
// warm-start between environment epochs. Returns the mean NLL of the final
// epoch.
double fit_model_inplace(GaussianModel& model, Adam& opt,
                         const TransitionDataset& data, int epochs,
                         int batch_size, RngStream& rng);

struct ModelError {
  double eps_e = 0.0;  // (1 - delta_e) quantile of held-out residual norms
  double d_e = 0.0;    // maximum observed residual norm
};

// Nearest-rank quantile of ||(s' - s) - delta_mean(s, a)||_inf over held-out
// transitions, plus the observed max.
ModelError measure_model_error(const GaussianModel& model,
                               const TransitionDataset& heldout,
                               double delta_e);

// Dynamics oracle for the certifier: either a learned model or a white-box
// environment standing in as its own exact model. noise_std() covers the k+1
// outputs (state block then reward; exact rewards have zero reward noise).
class AbstractDynamics {
 public:
  virtual ~AbstractDynamics() = default;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual std::pair<Eigen::VectorXd, double> predict(
      const Eigen::VectorXd& s, const Eigen::VectorXd& a) const = 0;
  virtual std::pair<Box, Box> predict_abs(const Box& s, const Box& a) const = 0;
  virtual Eigen::VectorXd noise_std() const = 0;
  virtual double eps_e() const = 0;
  virtual double delta_e() const = 0;
  virtual double d_e() const = 0;
  // "learned" or "exact": which reward source certificates must declare.
  virtual std::string reward_mode() const = 0;
  virtual double dynamics_lipschitz() const = 0;
  virtual double reward_lipschitz() const = 0;
  virtual std::uint64_t content_hash() const = 0;
};

class ModelDynamics final : public AbstractDynamics {
 public:
  explicit ModelDynamics(GaussianModel model);

  int state_dim() const override { return model_.state_dim; }
  int action_dim() const override { return model_.action_dim; }
  std::pair<Eigen::VectorXd, double> predict(
      const Eigen::VectorXd& s, const Eigen::VectorXd& a) const override {
    return model_.predict(s, a);
  }
  std::pair<Box, Box> predict_abs(const Box& s, const Box& a) const override {
    return model_.predict_abs(s, a);
  }
  Eigen::VectorXd noise_std() const override { return model_.noise_std(); }
  double eps_e() const override { return model_.eps_e; }
  double delta_e() const override { return model_.delta_e; }
  double d_e() const override { return model_.d_e; }
  std::string reward_mode() const override { return "learned"; }
  // Next state is s + delta(s, a), so its constant is 1 plus the net's.
  double dynamics_lipschitz() const override {
    return 1.0 + model_.mean_net.lipschitz_upper();
  }
  double reward_lipschitz() const override {
    return model_.mean_net.lipschitz_upper();
  }
  std::uint64_t content_hash() const override { return model_.content_hash(); }

  const GaussianModel& model() const { return model_; }

 private:
  GaussianModel model_;
};

class EnvDynamics final : public AbstractDynamics {
 public:
  explicit EnvDynamics(Mdp env);

  int state_dim() const override { return env_.state_dim; }
  int action_dim() const override { return env_.action_dim; }
  std::pair<Eigen::VectorXd, double> predict(
      const Eigen::VectorXd& s, const Eigen::VectorXd& a) const override;
  std::pair<Box, Box> predict_abs(const Box& s, const Box& a) const override;
  Eigen::VectorXd noise_std() const override { return noise_std_; }
  double eps_e() const override { return 0.0; }
  double delta_e() const override { return 0.0; }
  double d_e() const override { return 0.0; }
  std::string reward_mode() const override { return "exact"; }
  double dynamics_lipschitz() const override { return env_.dynamics_lipschitz; }
  double reward_lipschitz() const override { return env_.reward_lipschitz; }
  std::uint64_t content_hash() const override;

  const Mdp& env() const { return env_; }

 private:
  Mdp env_;
  Eigen::VectorXd noise_std_;
};

}  // namespace certrl
