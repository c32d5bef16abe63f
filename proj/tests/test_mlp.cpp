#include "certrl/mlp.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "certrl/hash.hpp"
#include "certrl/rng.hpp"
#include "doctest.h"

using certrl::Activation;
using certrl::Box;
using certrl::Layer;
using certrl::Mlp;
using certrl::ParamGradient;
using certrl::RngStream;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<int>(xs.size()));
  int i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Mlp single_layer(Eigen::MatrixXd W, Eigen::VectorXd b, Activation act) {
  Layer lay;
  lay.weight = std::move(W);
  lay.bias = std::move(b);
  lay.act = act;
  std::vector<Layer> layers;
  layers.push_back(std::move(lay));
  return Mlp(std::move(layers));
}

// Central-difference gradient of an arbitrary scalar of the network, the
// independent oracle for both reverse-mode passes.
template <class F>
ParamGradient numeric_grad(Mlp& net, F scalar, double h = 1e-5) {
  ParamGradient g = ParamGradient::zeros_like(net);
  for (std::size_t l = 0; l < net.mutable_layers().size(); ++l) {
    Layer& lay = net.mutable_layers()[l];
    for (Eigen::Index i = 0; i < lay.weight.size(); ++i) {
      double& p = lay.weight.data()[i];
      const double orig = p;
      p = orig + h;
      const double hi = scalar();
      p = orig - h;
      const double lo = scalar();
      p = orig;
      g.weight[l].data()[i] = (hi - lo) / (2.0 * h);
    }
    for (Eigen::Index i = 0; i < lay.bias.size(); ++i) {
      double& p = lay.bias[i];
      const double orig = p;
      p = orig + h;
      const double hi = scalar();
      p = orig - h;
      const double lo = scalar();
      p = orig;
      g.bias[l][i] = (hi - lo) / (2.0 * h);
    }
  }
  return g;
}

void check_grad_close(const ParamGradient& got, const ParamGradient& want,
                      double rel_tol) {
  REQUIRE(got.weight.size() == want.weight.size());
  for (std::size_t l = 0; l < got.weight.size(); ++l) {
    for (Eigen::Index i = 0; i < got.weight[l].size(); ++i) {
      const double a = got.weight[l].data()[i];
      const double b = want.weight[l].data()[i];
      CHECK(std::abs(a - b) <= rel_tol * std::max(1.0, std::abs(b)));
    }
    for (Eigen::Index i = 0; i < got.bias[l].size(); ++i) {
      const double a = got.bias[l][i];
      const double b = want.bias[l][i];
      CHECK(std::abs(a - b) <= rel_tol * std::max(1.0, std::abs(b)));
    }
  }
}

Box random_box(RngStream& rng, int dim) {
  return Box(rng.uniform_vec(dim, -1.5, 1.5), rng.uniform_vec(dim, 0.05, 0.6));
}

}  // namespace

TEST_SUITE("mlp") {

TEST_CASE("forward computes dense layers") {
  const Mlp ident = single_layer(Eigen::MatrixXd::Identity(3, 3),
                                 Eigen::VectorXd::Zero(3), Activation::identity);
  const Eigen::VectorXd x = vec({0.1, -2.0, 3.5});
  CHECK((ident.forward(x) - x).lpNorm<Eigen::Infinity>() == 0.0);

  Eigen::MatrixXd W(1, 1);
  W << -1.0;
  const Mlp neg_relu = single_layer(W, Eigen::VectorXd::Zero(1), Activation::relu);
  CHECK(neg_relu.forward(vec({2.0}))[0] == 0.0);

  CHECK_THROWS_AS(ident.forward(vec({1.0})), std::invalid_argument);
}

TEST_CASE("constructor rejects malformed layer stacks") {
  std::vector<Layer> bad(2);
  bad[0].weight = Eigen::MatrixXd::Zero(3, 2);
  bad[0].bias = Eigen::VectorXd::Zero(3);
  bad[1].weight = Eigen::MatrixXd::Zero(2, 4);  // expects 3 inputs
  bad[1].bias = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(Mlp(std::move(bad)), std::invalid_argument);
  CHECK_THROWS_AS(Mlp(std::vector<Layer>{}), std::invalid_argument);
}

TEST_CASE("abstract forward reduces to concrete forward on points") {
  RngStream rng(42);
  for (int trial = 0; trial < 30; ++trial) {
    const Activation hidden = (trial % 3 == 0)   ? Activation::relu
                              : (trial % 3 == 1) ? Activation::tanh
                                                 : Activation::sigmoid;
    const Mlp net = Mlp::random({3, 6, 5, 2}, hidden, Activation::identity, rng);
    const Eigen::VectorXd x = rng.uniform_vec(3, -2, 2);
    const Box out = net.forward_abs(certrl::from_point(x));
    CHECK(out.deviation.isZero(0.0));
    CHECK((out.center - net.forward(x)).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("abstract forward contains concrete outputs") {
  RngStream rng(43);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const Activation hidden = (trial % 3 == 0)   ? Activation::relu
                              : (trial % 3 == 1) ? Activation::tanh
                                                 : Activation::sigmoid;
    const Mlp net = Mlp::random({4, 8, 8, 3}, hidden, Activation::identity, rng);
    const Box in = random_box(rng, 4);
    const Box out = net.forward_abs(in);
    for (int s = 0; s < 30; ++s) {
      Eigen::VectorXd x(4);
      for (int i = 0; i < 4; ++i)
        x[i] = rng.uniform(in.lower()[i], in.upper()[i]);
      CHECK(out.contains(net.forward(x), 1e-9));
      ++checked;
    }
  }
  CHECK(checked >= 1000);
}

TEST_CASE("backward matches the closed form on a linear layer") {
  RngStream rng(7);
  const Mlp net = single_layer(
      Eigen::MatrixXd::NullaryExpr(
          2, 3, [&](Eigen::Index, Eigen::Index) { return rng.uniform(-1, 1); }),
      rng.uniform_vec(2, -1, 1), Activation::identity);
  const Eigen::VectorXd x = vec({0.5, -1.0, 2.0});
  const Eigen::VectorXd up = vec({1.5, -0.25});

  certrl::MlpCache cache;
  net.forward(x, &cache);
  ParamGradient g = ParamGradient::zeros_like(net);
  net.backward(cache, up, &g);
  CHECK((g.weight[0] - up * x.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((g.bias[0] - up).lpNorm<Eigen::Infinity>() == 0.0);

  ParamGradient z = ParamGradient::zeros_like(net);
  net.backward(cache, Eigen::VectorXd::Zero(2), &z);
  CHECK(z.max_abs() == 0.0);
}

TEST_CASE("backward matches finite differences") {
  RngStream rng(8);
  Mlp net = Mlp::random({3, 5, 4, 2}, Activation::tanh, Activation::tanh, rng);
  const Eigen::VectorXd x = rng.uniform_vec(3, -1, 1);
  const Eigen::VectorXd up = rng.uniform_vec(2, -1, 1);

  certrl::MlpCache cache;
  net.forward(x, &cache);
  ParamGradient got = ParamGradient::zeros_like(net);
  Eigen::VectorXd in_grad;
  net.backward(cache, up, &got, &in_grad);

  const ParamGradient want =
      numeric_grad(net, [&] { return up.dot(net.forward(x)); });
  check_grad_close(got, want, 1e-4);

  // Input gradient against the same oracle, perturbing x.
  Eigen::VectorXd xp = x;
  for (int i = 0; i < 3; ++i) {
    const double h = 1e-5;
    xp[i] = x[i] + h;
    const double hi = up.dot(net.forward(xp));
    xp[i] = x[i] - h;
    const double lo = up.dot(net.forward(xp));
    xp[i] = x[i];
    const double fd = (hi - lo) / (2 * h);
    CHECK(std::abs(in_grad[i] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("abstract backward degenerates to concrete on points") {
  RngStream rng(9);
  Mlp net = Mlp::random({3, 6, 2}, Activation::sigmoid, Activation::identity, rng);
  const Eigen::VectorXd x = rng.uniform_vec(3, -1, 1);
  const Eigen::VectorXd up = rng.uniform_vec(2, -1, 1);

  certrl::MlpCache cc;
  net.forward(x, &cc);
  ParamGradient concrete = ParamGradient::zeros_like(net);
  net.backward(cc, up, &concrete);

  certrl::MlpAbsCache ac;
  net.forward_abs(certrl::from_point(x), &ac);
  ParamGradient abstract = ParamGradient::zeros_like(net);
  net.backward_abs(ac, up, Eigen::VectorXd::Zero(2), &abstract);

  for (std::size_t l = 0; l < concrete.weight.size(); ++l) {
    CHECK((concrete.weight[l] - abstract.weight[l]).lpNorm<Eigen::Infinity>() <
          1e-12);
    CHECK((concrete.bias[l] - abstract.bias[l]).lpNorm<Eigen::Infinity>() <
          1e-12);
  }
}

TEST_CASE("abstract backward matches finite differences on the lower bound") {
  RngStream rng(10);
  Mlp net = Mlp::random({3, 5, 2}, Activation::tanh, Activation::tanh, rng);
  const Box in = random_box(rng, 3);

  // Scalar under test: sum of the output lower bound, i.e. upstream weights
  // +1 on centers and -1 on deviations.
  const auto lower_sum = [&] {
    const Box out = net.forward_abs(in);
    return (out.center - out.deviation).sum();
  };

  certrl::MlpAbsCache ac;
  const Box out = net.forward_abs(in, &ac);
  ParamGradient got = ParamGradient::zeros_like(net);
  Eigen::VectorXd d_center, d_dev;
  net.backward_abs(ac, Eigen::VectorXd::Ones(out.dim()),
                   -Eigen::VectorXd::Ones(out.dim()), &got, &d_center, &d_dev);

  const ParamGradient want = numeric_grad(net, lower_sum);
  check_grad_close(got, want, 1e-4);

  // Input box gradients, perturbing center and deviation coordinates.
  Box probe = in;
  const double h = 1e-5;
  for (int i = 0; i < in.dim(); ++i) {
    probe.center[i] = in.center[i] + h;
    double hi = (net.forward_abs(probe).center - net.forward_abs(probe).deviation).sum();
    probe.center[i] = in.center[i] - h;
    double lo = (net.forward_abs(probe).center - net.forward_abs(probe).deviation).sum();
    probe.center[i] = in.center[i];
    double fd = (hi - lo) / (2 * h);
    CHECK(std::abs(d_center[i] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));

    probe.deviation[i] = in.deviation[i] + h;
    hi = (net.forward_abs(probe).center - net.forward_abs(probe).deviation).sum();
    probe.deviation[i] = in.deviation[i] - h;
    lo = (net.forward_abs(probe).center - net.forward_abs(probe).deviation).sum();
    probe.deviation[i] = in.deviation[i];
    fd = (hi - lo) / (2 * h);
    CHECK(std::abs(d_dev[i] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("deviation gradient is nonnegative for positive weights") {
  RngStream rng(11);
  Mlp net = single_layer(
      Eigen::MatrixXd::NullaryExpr(
          3, 3, [&](Eigen::Index, Eigen::Index) { return rng.uniform(0.1, 2.0); }),
      Eigen::VectorXd::Zero(3), Activation::identity);
  const Box in = random_box(rng, 3);

  certrl::MlpAbsCache ac;
  net.forward_abs(in, &ac);
  ParamGradient g = ParamGradient::zeros_like(net);
  net.backward_abs(ac, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3), &g);
  CHECK((g.weight[0].array() >= 0.0).all());
}

TEST_CASE("lipschitz_upper bounds sampled difference quotients") {
  const Mlp ident = single_layer(Eigen::MatrixXd::Identity(4, 4),
                                 Eigen::VectorXd::Zero(4), Activation::identity);
  CHECK(ident.lipschitz_upper() == 1.0);

  Eigen::MatrixXd D(2, 2);
  D << 2, 0, 0, 3;
  CHECK(single_layer(D, Eigen::VectorXd::Zero(2), Activation::identity)
            .lipschitz_upper() == 3.0);

  // Two layers with infinity norms 2 and 3 compose to a bound of at most 6.
  std::vector<Layer> comp(2);
  comp[0].weight = D;
  comp[0].bias = Eigen::VectorXd::Zero(2);
  comp[0].act = Activation::tanh;
  comp[1].weight = (Eigen::MatrixXd(2, 2) << 1, 1, 0.5, -0.5).finished();
  comp[1].bias = Eigen::VectorXd::Zero(2);
  comp[1].act = Activation::identity;
  Mlp stacked(std::move(comp));
  CHECK(stacked.lipschitz_upper() == doctest::Approx(6.0));

  RngStream rng(12);
  const Mlp net = Mlp::random({3, 8, 3}, Activation::tanh, Activation::identity, rng);
  const double L = net.lipschitz_upper();
  for (int i = 0; i < 200; ++i) {
    const Eigen::VectorXd x = rng.uniform_vec(3, -2, 2);
    const Eigen::VectorXd y = rng.uniform_vec(3, -2, 2);
    const double dx = (x - y).lpNorm<Eigen::Infinity>();
    if (dx == 0.0) continue;
    const double df = (net.forward(x) - net.forward(y)).lpNorm<Eigen::Infinity>();
    CHECK(df <= L * dx * (1 + 1e-12));
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  RngStream rng(13);
  const Mlp net = Mlp::random({3, 7, 2}, Activation::relu, Activation::tanh, rng);
  const auto path = std::filesystem::temp_directory_path() / "certrl_mlp_rt.txt";
  net.save(path.string());

  const Mlp back = Mlp::load(path.string());
  REQUIRE(back.num_layers() == net.num_layers());
  for (int l = 0; l < net.num_layers(); ++l) {
    CHECK((back.layers()[l].weight - net.layers()[l].weight)
              .lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((back.layers()[l].bias - net.layers()[l].bias)
              .lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(back.layers()[l].act == net.layers()[l].act);
  }
  CHECK(back.param_hash() == net.param_hash());
  // The identity hash is the hash of the file bytes, so external tools can
  // recompute it without loading the network.
  CHECK(certrl::hash_file(path.string()) == net.param_hash());
  std::filesystem::remove(path);
}

TEST_CASE("malformed checkpoints are rejected") {
  std::istringstream bad_magic("not a checkpoint\n");
  CHECK_THROWS_AS(Mlp::deserialize(bad_magic), std::runtime_error);

  std::istringstream truncated("certrl mlp 1\nlayers 1\nlayer 2 2 relu\n1 2\n");
  CHECK_THROWS_AS(Mlp::deserialize(truncated), std::runtime_error);

  std::istringstream bad_act("certrl mlp 1\nlayers 1\nlayer 1 1 softmax\n1\n1\n");
  CHECK_THROWS_AS(Mlp::deserialize(bad_act), std::invalid_argument);
}

TEST_CASE("seeded construction is reproducible") {
  RngStream a = RngStream::derive(100, 0);
  RngStream b = RngStream::derive(100, 0);
  RngStream c = RngStream::derive(100, 1);
  const Mlp na = Mlp::random({2, 4, 1}, Activation::tanh, Activation::identity, a);
  const Mlp nb = Mlp::random({2, 4, 1}, Activation::tanh, Activation::identity, b);
  const Mlp nc = Mlp::random({2, 4, 1}, Activation::tanh, Activation::identity, c);
  CHECK(na.param_hash() == nb.param_hash());
  CHECK(na.param_hash() != nc.param_hash());
}

}  // TEST_SUITE
