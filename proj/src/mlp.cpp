#include "certrl/mlp.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "certrl/hash.hpp"

namespace certrl {

namespace {

constexpr const char* kMagic = "certrl mlp 1";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double act_deriv(Activation a, double z) {
  switch (a) {
    case Activation::identity:
      return 1.0;
    case Activation::relu:
      return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::sigmoid: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
  }
  throw std::invalid_argument("act_deriv: unknown activation");
}

Eigen::VectorXd apply_act(Activation a, const Eigen::VectorXd& z) {
  switch (a) {
    case Activation::identity:
      return z;
    case Activation::relu:
      return z.cwiseMax(0.0);
    case Activation::tanh:
      return z.array().tanh().matrix();
    case Activation::sigmoid:
      return z.unaryExpr([](double v) { return sigmoid(v); });
  }
  throw std::invalid_argument("apply_act: unknown activation");
}

Box apply_act_abs(Activation a, const Box& z) {
  switch (a) {
    case Activation::identity:
      return z;
    case Activation::relu:
      return relu(z);
    case Activation::tanh:
      return tanh(z);
    case Activation::sigmoid:
      return sigmoid(z);
  }
  throw std::invalid_argument("apply_act_abs: unknown activation");
}

Eigen::VectorXd deriv_vec(Activation a, const Eigen::VectorXd& z) {
  return z.unaryExpr([a](double v) { return act_deriv(a, v); });
}

}  // namespace

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity:
      return "identity";
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
    case Activation::sigmoid:
      return "sigmoid";
  }
  throw std::invalid_argument("activation_name: unknown activation");
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation: " + name);
}

ParamGradient ParamGradient::zeros_like(const Mlp& net) {
  ParamGradient g;
  for (const Layer& l : net.layers()) {
    g.weight.emplace_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.emplace_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return g;
}

ParamGradient& ParamGradient::operator+=(const ParamGradient& other) {
  if (weight.size() != other.weight.size())
    throw std::invalid_argument("ParamGradient: layer count mismatch");
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] += other.weight[l];
    bias[l] += other.bias[l];
  }
  return *this;
}

void ParamGradient::scale(double k) {
  for (auto& w : weight) w *= k;
  for (auto& b : bias) b *= k;
}

double ParamGradient::max_abs() const {
  double m = 0.0;
  for (const auto& w : weight)
    if (w.size() > 0) m = std::max(m, w.cwiseAbs().maxCoeff());
  for (const auto& b : bias)
    if (b.size() > 0) m = std::max(m, b.cwiseAbs().maxCoeff());
  return m;
}

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("Mlp: no layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& lay = layers_[l];
    if (lay.weight.rows() != lay.bias.size())
      throw std::invalid_argument("Mlp: weight/bias shape mismatch");
    if (l > 0 && lay.weight.cols() != layers_[l - 1].weight.rows())
      throw std::invalid_argument("Mlp: consecutive layer shapes do not conform");
    if (!lay.weight.allFinite() || !lay.bias.allFinite())
      throw std::invalid_argument("Mlp: non-finite parameters");
  }
}

Mlp Mlp::random(const std::vector<int>& dims, Activation hidden,
                Activation output, RngStream& rng) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp::random: need >= 2 dims");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const int fan_in = dims[i];
    const int fan_out = dims[i + 1];
    if (fan_in <= 0 || fan_out <= 0)
      throw std::invalid_argument("Mlp::random: non-positive dim");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Layer lay;
    lay.weight = Eigen::MatrixXd::NullaryExpr(
        fan_out, fan_in,
        [&](Eigen::Index, Eigen::Index) { return rng.uniform(-bound, bound); });
    lay.bias = rng.uniform_vec(fan_out, -bound, bound);
    lay.act = (i + 2 < dims.size()) ? hidden : output;
    layers.push_back(std::move(lay));
  }
  return Mlp(std::move(layers));
}

int Mlp::input_dim() const {
  return static_cast<int>(layers_.front().weight.cols());
}

int Mlp::output_dim() const {
  return static_cast<int>(layers_.back().weight.rows());
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x, MlpCache* cache) const {
  if (x.size() != input_dim())
    throw std::invalid_argument("Mlp::forward: input dim mismatch");
  if (cache) {
    cache->acts.clear();
    cache->pre.clear();
    cache->acts.push_back(x);
  }
  Eigen::VectorXd a = x;
  for (const Layer& lay : layers_) {
    Eigen::VectorXd z = lay.weight * a + lay.bias;
    a = apply_act(lay.act, z);
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->acts.push_back(a);
    }
  }
  if (!a.allFinite())
    throw std::runtime_error("Mlp::forward: non-finite output");
  return a;
}

Box Mlp::forward_abs(const Box& b, MlpAbsCache* cache) const {
  if (b.dim() != input_dim())
    throw std::invalid_argument("Mlp::forward_abs: input dim mismatch");
  if (cache) {
    cache->acts.clear();
    cache->pre.clear();
    cache->acts.push_back(b);
  }
  Box cur = b;
  for (const Layer& lay : layers_) {
    Box z = affine(lay.weight, lay.bias, cur);
    cur = apply_act_abs(lay.act, z);
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->acts.push_back(cur);
    }
  }
  return cur;
}

void Mlp::backward(const MlpCache& cache, const Eigen::VectorXd& upstream,
                   ParamGradient* grad, Eigen::VectorXd* input_grad) const {
  const int L = num_layers();
  if (static_cast<int>(cache.pre.size()) != L ||
      static_cast<int>(cache.acts.size()) != L + 1)
    throw std::invalid_argument("Mlp::backward: stale cache");
  if (upstream.size() != output_dim())
    throw std::invalid_argument("Mlp::backward: upstream dim mismatch");

  Eigen::VectorXd delta =
      upstream.cwiseProduct(deriv_vec(layers_[L - 1].act, cache.pre[L - 1]));
  for (int l = L - 1; l >= 0; --l) {
    if (grad) {
      grad->weight[l] += delta * cache.acts[l].transpose();
      grad->bias[l] += delta;
    }
    const Eigen::VectorXd da = layers_[l].weight.transpose() * delta;
    if (l == 0) {
      if (input_grad) *input_grad = da;
    } else {
      delta = da.cwiseProduct(deriv_vec(layers_[l - 1].act, cache.pre[l - 1]));
    }
  }
}

void Mlp::backward_abs(const MlpAbsCache& cache,
                       const Eigen::VectorXd& up_center,
                       const Eigen::VectorXd& up_dev, ParamGradient* grad,
                       Eigen::VectorXd* in_center_grad,
                       Eigen::VectorXd* in_dev_grad) const {
  const int L = num_layers();
  if (static_cast<int>(cache.pre.size()) != L ||
      static_cast<int>(cache.acts.size()) != L + 1)
    throw std::invalid_argument("Mlp::backward_abs: stale cache");
  if (up_center.size() != output_dim() || up_dev.size() != output_dim())
    throw std::invalid_argument("Mlp::backward_abs: upstream dim mismatch");

  Eigen::VectorXd dc = up_center;
  Eigen::VectorXd de = up_dev;
  for (int l = L - 1; l >= 0; --l) {
    const Layer& lay = layers_[l];
    // Through the activation's endpoint rule. With u/lo the interval ends of
    // the pre-activation box: center' = (g(u)+g(lo))/2, dev' = (g(u)-g(lo))/2,
    // so the pullback routes (dc +/- de)/2 through g' at each endpoint.
    Eigen::VectorXd dzc, dze;
    if (lay.act == Activation::identity) {
      dzc = dc;
      dze = de;
    } else {
      const Box& z = cache.pre[l];
      const Eigen::VectorXd u = z.upper();
      const Eigen::VectorXd lo = z.lower();
      dzc.resize(z.dim());
      dze.resize(z.dim());
      for (int i = 0; i < z.dim(); ++i) {
        const double ubar = 0.5 * (dc[i] + de[i]) * act_deriv(lay.act, u[i]);
        const double lbar = 0.5 * (dc[i] - de[i]) * act_deriv(lay.act, lo[i]);
        dzc[i] = ubar + lbar;
        dze[i] = ubar - lbar;
      }
    }
    // Through the affine transfer center' = W c + b, dev' = |W| e. The |W|
    // factor differentiates to sign(W) elementwise.
    const Box& a = cache.acts[l];
    if (grad) {
      grad->weight[l] += dzc * a.center.transpose() +
                         (dze * a.deviation.transpose())
                             .cwiseProduct(lay.weight.array().sign().matrix());
      grad->bias[l] += dzc;
    }
    if (l == 0) {
      if (in_center_grad) *in_center_grad = lay.weight.transpose() * dzc;
      if (in_dev_grad) *in_dev_grad = lay.weight.cwiseAbs().transpose() * dze;
    } else {
      dc = lay.weight.transpose() * dzc;
      de = lay.weight.cwiseAbs().transpose() * dze;
    }
  }
}

double Mlp::lipschitz_upper() const {
  double prod = 1.0;
  for (const Layer& lay : layers_)
    prod *= lay.weight.cwiseAbs().rowwise().sum().maxCoeff();
  return prod;
}

void Mlp::apply_gradient(const ParamGradient& g, double lr) {
  if (g.weight.size() != layers_.size())
    throw std::invalid_argument("apply_gradient: layer count mismatch");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weight -= lr * g.weight[l];
    layers_[l].bias -= lr * g.bias[l];
  }
}

int Mlp::param_count() const {
  int n = 0;
  for (const Layer& lay : layers_)
    n += static_cast<int>(lay.weight.size() + lay.bias.size());
  return n;
}

std::string Mlp::serialize() const {
  std::string out;
  out += kMagic;
  out += "\nlayers " + std::to_string(layers_.size()) + "\n";
  for (const Layer& lay : layers_) {
    out += "layer " + std::to_string(lay.weight.rows()) + " " +
           std::to_string(lay.weight.cols()) + " " + activation_name(lay.act) +
           "\n";
    for (Eigen::Index r = 0; r < lay.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < lay.weight.cols(); ++c) {
        if (c > 0) out += ' ';
        out += fmt(lay.weight(r, c));
      }
      out += '\n';
    }
    for (Eigen::Index i = 0; i < lay.bias.size(); ++i) {
      if (i > 0) out += ' ';
      out += fmt(lay.bias[i]);
    }
    out += '\n';
  }
  return out;
}

Mlp Mlp::deserialize(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw std::runtime_error("checkpoint: bad magic line");
  std::string word;
  std::size_t count = 0;
  if (!(in >> word >> count) || word != "layers" || count == 0)
    throw std::runtime_error("checkpoint: bad layer count");
  std::vector<Layer> layers;
  for (std::size_t l = 0; l < count; ++l) {
    Eigen::Index rows = 0, cols = 0;
    std::string act;
    if (!(in >> word >> rows >> cols >> act) || word != "layer" || rows <= 0 ||
        cols <= 0)
      throw std::runtime_error("checkpoint: bad layer header");
    Layer lay;
    lay.act = parse_activation(act);
    lay.weight.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        if (!(in >> lay.weight(r, c)))
          throw std::runtime_error("checkpoint: truncated weights");
    lay.bias.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i)
      if (!(in >> lay.bias[i]))
        throw std::runtime_error("checkpoint: truncated bias");
    layers.push_back(std::move(lay));
  }
  return Mlp(std::move(layers));
}

void Mlp::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << serialize();
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Mlp Mlp::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  return deserialize(in);
}

std::uint64_t Mlp::param_hash() const { return fnv1a64(serialize()); }

}  // namespace certrl
