#pragma once

// Finite-difference oracles used to check the autodiff engine.  They only see
// plain value functions and never call grad().

#include <Eigen/Core>

#include <functional>

namespace pinnsformer::testing {

using ValueFn = std::function<double(const Eigen::VectorXd&)>;

inline Eigen::VectorXd central_gradient(const ValueFn& f, const Eigen::VectorXd& x, double step) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(probe);
    probe[i] = x[i] - step;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

inline double central_second(const std::function<double(double)>& f, double x, double step) {
  return (f(x + step) - 2.0 * f(x) + f(x - step)) / (step * step);
}

inline double relative_error(double actual, double expected, double floor = 1e-8) {
  return std::abs(actual - expected) / std::max(std::abs(expected), floor);
}

inline double relative_error(const Eigen::VectorXd& actual, const Eigen::VectorXd& expected, double floor = 1e-8) {
  return (actual - expected).norm() / std::max(expected.norm(), floor);
}

}  // namespace pinnsformer::testing
