#pragma once

#include <cmath>
#include <functional>

#include <Eigen/Dense>

namespace kacflow::detail {

struct AscentResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Damped Newton ascent for a smooth concave objective. `derivatives` returns
// the value and fills the gradient and Hessian; `value` returns -inf outside
// the domain. A small ridge handles flat directions.
inline AscentResult newton_ascent(
    const std::function<double(const Eigen::VectorXd&)>& value,
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::MatrixXd&)>& derivatives,
    Eigen::VectorXd x, double tolerance, int max_iterations) {
  AscentResult r;
  Eigen::VectorXd g(x.size());
  Eigen::MatrixXd H(x.size(), x.size());
  double fx = derivatives(x, g, H);
  for (r.iterations = 0; r.iterations < max_iterations; ++r.iterations) {
    r.gradient_norm = g.norm();
    if (r.gradient_norm <= tolerance) {
      r.converged = true;
      break;
    }
    Eigen::MatrixXd A = -H;
    const double ridge = 1e-12 * std::max(A.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    A.diagonal().array() += ridge;
    const Eigen::VectorXd d = A.ldlt().solve(g);
    const double slope = g.dot(d);
    if (!(slope > 0.0)) break;
    double step = 1.0, next = -INFINITY;
    Eigen::VectorXd y;
    for (int ls = 0; ls < 60; ++ls) {
      y = x + step * d;
      next = value(y);
      if (next >= fx + 1e-4 * step * slope) break;
      step *= 0.5;
    }
    if (!(next >= fx)) break;
    const bool stalled = next - fx <= 1e-15 * std::fabs(fx) && slope <= 1e-28;
    x = y;
    fx = derivatives(x, g, H);
    if (stalled) {
      r.gradient_norm = g.norm();
      r.converged = r.gradient_norm <= tolerance;
      break;
    }
  }
  r.gradient_norm = g.norm();
  r.converged = r.converged || r.gradient_norm <= tolerance;
  r.x = std::move(x);
  r.value = fx;
  return r;
}

}  // namespace kacflow::detail
