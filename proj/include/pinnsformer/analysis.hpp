#pragma once

// Error metrics and Hessian-based loss-landscape analysis.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pinnsformer/objective.hpp"

namespace pinnsformer {

class ZeroDenominator : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <typename A, typename B>
void check_metric_inputs(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("prediction and truth differ in size");
  if (truth.size() == 0) throw std::invalid_argument("metrics need at least one point");
}

}  // namespace detail

// sum |pred - truth| / sum |truth|
template <typename A, typename B>
double rmae(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& truth) {
  detail::check_metric_inputs(pred, truth);
  const double denom = truth.derived().array().abs().sum();
  if (!(denom > 0.0)) throw ZeroDenominator("rMAE: truth is identically zero");
  return (pred.derived().array() - truth.derived().array()).abs().sum() / denom;
}

// sqrt(sum |pred - truth|^2 / sum |truth|^2)
template <typename A, typename B>
double rrmse(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& truth) {
  detail::check_metric_inputs(pred, truth);
  const double denom = truth.derived().array().square().sum();
  if (!(denom > 0.0)) throw ZeroDenominator("rRMSE: truth is identically zero");
  return std::sqrt((pred.derived().array() - truth.derived().array()).square().sum() / denom);
}

// --- Hessian ---------------------------------------------------------------------------

// H v at theta, by differentiating grad(L) . v.
Eigen::VectorXd hessian_vector_product(const ScalarField& field, const Eigen::VectorXd& theta,
                                       const Eigen::VectorXd& v);

using LinearOperator = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct EigenOptions {
  int count = 2;
  int iterations = 100;
  double tolerance = 1e-4;  // on |Hv - lambda v| / |lambda|
  std::uint64_t seed = 0;
};

struct Eigenpair {
  double value = 0.0;
  Eigen::VectorXd vector;  // unit norm
  double residual = 0.0;   // |Hv - lambda v| / |lambda|
  bool converged = false;
};

// Dominant (largest magnitude) eigenpairs of a symmetric operator by power
// iteration with deflation, followed by a Rayleigh-Ritz step on the span of
// the vectors found.  Pairs that miss the tolerance are returned with
// converged = false.
std::vector<Eigenpair> top_eigenpairs(const LinearOperator& op, Index dimension, const EigenOptions& options = {});
std::vector<Eigenpair> top_eigenpairs(const ScalarField& field, const Eigen::VectorXd& theta,
                                      const EigenOptions& options = {});

// --- landscape ---------------------------------------------------------------------------

struct LandscapeGrid {
  Eigen::VectorXd alpha;  // along v1
  Eigen::VectorXd beta;   // along v2
  Eigen::MatrixXd loss;   // loss(i, j) at (alpha[i], beta[j])
  double lambda1 = 0.0;
  double lambda2 = 0.0;

  int n() const { return static_cast<int>(alpha.size()); }
  double center() const { return loss(n() / 2, n() / 2); }
};

// Loss at theta + alpha v1 + beta v2 on an n x n grid over [-r, r]^2.  n must be odd.
LandscapeGrid landscape(const ScalarField& field, const Eigen::VectorXd& theta, const Eigen::VectorXd& v1,
                        const Eigen::VectorXd& v2, double half_range, int n);

struct LandscapeOptions {
  int n = 41;
  std::optional<double> half_range;  // default 0.5 |theta| / |v|
  EigenOptions eigen;
};

// Landscape along the two dominant Hessian eigenvectors.
LandscapeGrid hessian_landscape(const ScalarField& field, const Eigen::VectorXd& theta,
                                const LandscapeOptions& options = {});

// Largest |delta loss| / |delta (alpha, beta)| over axis-adjacent cells.
double lipschitz_estimate(const LandscapeGrid& grid);

// Header `alpha,beta,loss`, one row per cell.
void write_landscape_csv(std::ostream& out, const LandscapeGrid& grid);

}  // namespace pinnsformer
