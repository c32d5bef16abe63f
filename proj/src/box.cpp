#include "certrl/box.hpp"

#include <cmath>
#include <stdexcept>

namespace certrl {

namespace {

void check_same_dim(const Box& b1, const Box& b2, const char* op) {
  if (b1.dim() != b2.dim())
    throw std::invalid_argument(std::string(op) + ": dimension mismatch");
}

// Endpoint rule for a monotone nondecreasing scalar map g: the image of
// [l, u] is [g(l), g(u)], re-centered. Singletons stay exact because
// 0.5 * (x + x) == x in IEEE arithmetic.
template <class G>
Box monotone(const Box& b, G g) {
  const Eigen::VectorXd lo = b.lower();
  const Eigen::VectorXd hi = b.upper();
  Eigen::VectorXd c(b.dim()), e(b.dim());
  for (int i = 0; i < b.dim(); ++i) {
    const double gl = g(lo[i]);
    const double gu = g(hi[i]);
    c[i] = 0.5 * (gu + gl);
    e[i] = 0.5 * (gu - gl);
  }
  return Box(std::move(c), std::move(e));
}

}  // namespace

Box::Box(Eigen::VectorXd c, Eigen::VectorXd e)
    : center(std::move(c)), deviation(std::move(e)) {
  if (center.size() != deviation.size())
    throw std::invalid_argument("Box: center/deviation size mismatch");
  // Written so that NaN deviations (possible after a bound explosion) pass
  // through; only definitely-negative entries are rejected.
  if ((deviation.array() < 0.0).any())
    throw std::invalid_argument("Box: negative deviation");
}

bool Box::contains(const Eigen::VectorXd& x, double tol) const {
  if (x.size() != center.size()) return false;
  for (int i = 0; i < dim(); ++i) {
    const double l = center[i] - deviation[i];
    const double u = center[i] + deviation[i];
    if (!(x[i] >= l - tol && x[i] <= u + tol)) return false;
  }
  return true;
}

Box from_point(const Eigen::VectorXd& x) {
  if (!x.allFinite())
    throw std::invalid_argument("from_point: non-finite input");
  return Box(x, Eigen::VectorXd::Zero(x.size()));
}

Box from_interval(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  if (lo.size() != hi.size())
    throw std::invalid_argument("from_interval: size mismatch");
  if ((hi.array() < lo.array()).any())
    throw std::invalid_argument("from_interval: empty interval");
  return Box(0.5 * (hi + lo), 0.5 * (hi - lo));
}

Box widen(const Box& b, double eps) {
  if (eps < 0.0) throw std::invalid_argument("widen: negative eps");
  return Box(b.center, b.deviation.array() + eps);
}

Box widen(const Box& b, const Eigen::VectorXd& eps) {
  if (eps.size() != b.dim())
    throw std::invalid_argument("widen: eps dimension mismatch");
  if ((eps.array() < 0.0).any())
    throw std::invalid_argument("widen: negative eps");
  return Box(b.center, b.deviation + eps);
}

Box affine(const Eigen::MatrixXd& M, const Eigen::VectorXd& bias,
           const Box& b) {
  if (M.cols() != b.dim() || M.rows() != bias.size())
    throw std::invalid_argument("affine: shape mismatch");
  return Box(M * b.center + bias, M.cwiseAbs() * b.deviation);
}

Box add(const Box& b1, const Box& b2) {
  check_same_dim(b1, b2, "add");
  return Box(b1.center + b2.center, b1.deviation + b2.deviation);
}

Box add(const Box& b, const Eigen::VectorXd& v) {
  if (v.size() != b.dim()) throw std::invalid_argument("add: dim mismatch");
  return Box(b.center + v, b.deviation);
}

Box scale(const Box& b, double k) {
  return Box(k * b.center, std::abs(k) * b.deviation);
}

Box relu(const Box& b) {
  return monotone(b, [](double x) { return relu(x); });
}

Box sigmoid(const Box& b) {
  return monotone(b, [](double x) { return sigmoid(x); });
}

Box tanh(const Box& b) {
  return monotone(b, [](double x) { return std::tanh(x); });
}

Box clamp(const Box& b, double lo, double hi) {
  if (hi < lo) throw std::invalid_argument("clamp: hi < lo");
  return monotone(b, [lo, hi](double x) { return std::clamp(x, lo, hi); });
}

Box abs(const Box& b) { return add(relu(b), relu(scale(b, -1.0))); }

Box sum_elements(const Box& b) {
  Eigen::VectorXd c(1), e(1);
  c[0] = b.center.sum();
  e[0] = b.deviation.sum();
  return Box(std::move(c), std::move(e));
}

Box concat(const Box& b1, const Box& b2) {
  Eigen::VectorXd c(b1.dim() + b2.dim()), e(b1.dim() + b2.dim());
  c << b1.center, b2.center;
  e << b1.deviation, b2.deviation;
  return Box(std::move(c), std::move(e));
}

Box segment(const Box& b, int start, int len) {
  if (start < 0 || len < 0 || start + len > b.dim())
    throw std::invalid_argument("segment: out of range");
  return Box(b.center.segment(start, len), b.deviation.segment(start, len));
}

}  // namespace certrl
