#pragma once

#include <Eigen/Dense>

namespace certrl {

// Axis-aligned box abstract value, stored as center and nonnegative
// per-dimension deviation. The concretization of b is the product of
// intervals [center_i - deviation_i, center_i + deviation_i].
//
// Deviations may be +inf (bound explosion is representable and detectable via
// finite()); they must never be negative.
struct Box {
  Eigen::VectorXd center;
  Eigen::VectorXd deviation;

  Box() = default;
  Box(Eigen::VectorXd c, Eigen::VectorXd e);

  int dim() const { return static_cast<int>(center.size()); }
  Eigen::VectorXd lower() const { return center - deviation; }
  Eigen::VectorXd upper() const { return center + deviation; }

  // True iff x lies inside the concretization, with absolute slack tol on
  // each side. Any NaN in x or in the bounds yields false.
  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const;

  bool finite() const { return center.allFinite() && deviation.allFinite(); }
};

// Singleton abstraction of a concrete point. Rejects non-finite input.
Box from_point(const Eigen::VectorXd& x);

// Box from explicit per-dimension bounds, lo[i] <= hi[i].
Box from_interval(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);

// Grow every dimension by eps (l-inf ball Minkowski sum). eps >= 0.
Box widen(const Box& b, double eps);
Box widen(const Box& b, const Eigen::VectorXd& eps);

// x -> M x + bias, exact per-dimension interval hull for a single map.
Box affine(const Eigen::MatrixXd& M, const Eigen::VectorXd& bias, const Box& b);

// Minkowski sum: centers add, deviations add.
Box add(const Box& b1, const Box& b2);
// Translation by a concrete vector.
Box add(const Box& b, const Eigen::VectorXd& v);

// x -> k x.
Box scale(const Box& b, double k);

// Monotone elementwise transfers, evaluated on the interval endpoints.
Box relu(const Box& b);
Box sigmoid(const Box& b);
Box tanh(const Box& b);
Box clamp(const Box& b, double lo, double hi);

// |x| via relu(x) + relu(-x); sound, possibly loose on straddling intervals.
Box abs(const Box& b);

// Sum of all dimensions, a 1-dim box.
Box sum_elements(const Box& b);

Box concat(const Box& b1, const Box& b2);
Box segment(const Box& b, int start, int len);

// Scalar activations shared with the concrete network passes.
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace certrl
