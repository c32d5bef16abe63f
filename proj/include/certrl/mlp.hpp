#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "certrl/box.hpp"
#include "certrl/rng.hpp"

namespace certrl {

enum class Activation { identity, relu, tanh, sigmoid };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

struct Layer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
  Activation act = Activation::identity;
};

class Mlp;

// Parameter-shaped gradient accumulator.
struct ParamGradient {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;

  static ParamGradient zeros_like(const Mlp& net);
  ParamGradient& operator+=(const ParamGradient& other);
  void scale(double k);
  double max_abs() const;
};

// Intermediate values of a concrete forward pass, kept for reverse mode.
struct MlpCache {
  std::vector<Eigen::VectorXd> acts;  // acts[0] = input, acts[l] = layer l output
  std::vector<Eigen::VectorXd> pre;   // pre[l] = W acts[l] + b, before activation
};

// Intermediate boxes of an abstract forward pass.
struct MlpAbsCache {
  std::vector<Box> acts;
  std::vector<Box> pre;
};

// Dense feed-forward network with a concrete pass, an interval pass, and
// exact reverse-mode gradients through both. The interval pass treats the
// recurrence center' = W c + b, deviation' = |W| e (then the endpoint rule
// for activations) as the computation graph, so bound-based losses are
// differentiable in the network parameters.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<Layer> layers);

  static Mlp random(const std::vector<int>& dims, Activation hidden,
                    Activation output, RngStream& rng);

  int input_dim() const;
  int output_dim() const;
  int num_layers() const { return static_cast<int>(layers_.size()); }
  const std::vector<Layer>& layers() const { return layers_; }
  // Direct parameter access for optimizers and finite-difference probes.
  std::vector<Layer>& mutable_layers() { return layers_; }

  Eigen::VectorXd forward(const Eigen::VectorXd& x,
                          MlpCache* cache = nullptr) const;
  Box forward_abs(const Box& b, MlpAbsCache* cache = nullptr) const;

  // Accumulates into *grad the gradients of <upstream, forward(x)>; the
  // forward must have been run with `cache`. Optionally also returns the
  // gradient with respect to the input.
  void backward(const MlpCache& cache, const Eigen::VectorXd& upstream,
                ParamGradient* grad,
                Eigen::VectorXd* input_grad = nullptr) const;

  // Gradients of <up_center, out.center> + <up_dev, out.deviation> through
  // the interval pass recorded in `cache`.
  void backward_abs(const MlpAbsCache& cache,
                    const Eigen::VectorXd& up_center,
                    const Eigen::VectorXd& up_dev, ParamGradient* grad,
                    Eigen::VectorXd* in_center_grad = nullptr,
                    Eigen::VectorXd* in_dev_grad = nullptr) const;

  // Product of layer weight-matrix infinity norms; upper-bounds the l-inf
  // Lipschitz constant (all supported activations are 1-Lipschitz).
  double lipschitz_upper() const;

  // In-place SGD step: p -= lr * g.
  void apply_gradient(const ParamGradient& g, double lr);

  int param_count() const;

  // Text checkpoint with 17-significant-digit decimals; round-trips doubles
  // bit-exactly. param_hash() hashes the exact serialized bytes, so it
  // matches a hash of the saved file.
  std::string serialize() const;
  static Mlp deserialize(std::istream& in);
  void save(const std::string& path) const;
  static Mlp load(const std::string& path);
  std::uint64_t param_hash() const;

 private:
  std::vector<Layer> layers_;
};

}  // namespace certrl
