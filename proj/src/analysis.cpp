#include "pinnsformer/analysis.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <limits>
#include <ostream>
#include <random>

namespace pinnsformer {

Eigen::VectorXd hessian_vector_product(const ScalarField& field, const Eigen::VectorXd& theta,
                                       const Eigen::VectorXd& v) {
  if (v.size() != theta.size()) throw std::invalid_argument("HVP direction differs in size from parameters");
  if (!(v.norm() > 0.0)) throw std::invalid_argument("HVP direction must be nonzero");
  const std::vector<Shape> shapes = field.parameter_shapes();
  Graph graph;
  const std::vector<DiffTensor> params = unflatten(theta, shapes, &graph);
  const DiffTensor loss = field.evaluate(graph, params);
  if (!loss.requires_grad()) return Eigen::VectorXd::Zero(theta.size());
  const std::vector<DiffTensor> g = grad(loss, params, true);
  const std::vector<DiffTensor> dir = unflatten(v, shapes, nullptr);
  DiffTensor directional;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const DiffTensor d = dot(g[i], dir[i]);
    directional = directional.defined() ? directional + d : d;
  }
  if (!directional.requires_grad()) return Eigen::VectorXd::Zero(theta.size());
  return flatten(grad(directional, params));
}

namespace {

double relative_residual(const Eigen::VectorXd& hv, const Eigen::VectorXd& v, double lambda) {
  const double r = (hv - lambda * v).norm();
  if (lambda == 0.0) return r == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return r / std::abs(lambda);
}

void orthogonalize(Eigen::VectorXd& v, const std::vector<Eigenpair>& found) {
  for (const Eigenpair& p : found) v -= p.vector.dot(v) * p.vector;
}

// Rayleigh-Ritz on the span of the deflated vectors, which removes the error
// each inexact pair leaks into the ones deflated against it.
void refine(const LinearOperator& op, std::vector<Eigenpair>& pairs, double tolerance) {
  const Index n = pairs.front().vector.size();
  const Index c = static_cast<Index>(pairs.size());
  Eigen::MatrixXd basis(n, c);
  for (Index j = 0; j < c; ++j) basis.col(j) = pairs[static_cast<std::size_t>(j)].vector;
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
  basis = qr.householderQ() * Eigen::MatrixXd::Identity(n, c);
  Eigen::MatrixXd image(n, c);
  for (Index j = 0; j < c; ++j) image.col(j) = op(basis.col(j));
  Eigen::MatrixXd projected = basis.transpose() * image;
  projected = 0.5 * (projected + projected.transpose()).eval();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(projected);
  std::vector<Index> order(static_cast<std::size_t>(c));
  for (Index j = 0; j < c; ++j) order[static_cast<std::size_t>(j)] = j;
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return std::abs(solver.eigenvalues()[a]) > std::abs(solver.eigenvalues()[b]);
  });
  for (Index j = 0; j < c; ++j) {
    const Index k = order[static_cast<std::size_t>(j)];
    const double lambda = solver.eigenvalues()[k];
    const Eigen::VectorXd v = basis * solver.eigenvectors().col(k);
    const Eigen::VectorXd hv = image * solver.eigenvectors().col(k);
    const double residual = relative_residual(hv, v, lambda);
    Eigenpair& p = pairs[static_cast<std::size_t>(j)];
    if (residual <= p.residual || !p.converged) {
      p = {lambda, v.normalized(), residual, residual <= tolerance};
    }
  }
}

}  // namespace

std::vector<Eigenpair> top_eigenpairs(const LinearOperator& op, Index dimension, const EigenOptions& options) {
  if (options.count < 1) throw std::invalid_argument("eigenpair count must be >= 1");
  if (options.count > dimension) throw std::invalid_argument("more eigenpairs requested than dimensions");
  if (options.iterations < 1) throw std::invalid_argument("power iteration needs at least one iteration");
  std::vector<Eigenpair> found;
  for (int p = 0; p < options.count; ++p) {
    std::mt19937_64 rng(options.seed + static_cast<std::uint64_t>(p));
    std::normal_distribution<double> normal;
    Eigen::VectorXd v(dimension);
    for (Index i = 0; i < dimension; ++i) v[i] = normal(rng);
    orthogonalize(v, found);
    v.normalize();

    Eigenpair best;
    for (int it = 0; it < options.iterations; ++it) {
      const Eigen::VectorXd hv = op(v);
      Eigen::VectorXd w = hv;
      for (const Eigenpair& q : found) w -= q.value * q.vector.dot(v) * q.vector;
      const double lambda = v.dot(w);
      best = {lambda, v, relative_residual(hv, v, lambda), false};
      if (best.residual <= options.tolerance) {
        best.converged = true;
        break;
      }
      orthogonalize(w, found);
      const double norm = w.norm();
      if (!(norm > 0.0) || !std::isfinite(norm)) break;
      v = w / norm;
    }
    found.push_back(std::move(best));
  }
  if (found.size() > 1) refine(op, found, options.tolerance);
  return found;
}

std::vector<Eigenpair> top_eigenpairs(const ScalarField& field, const Eigen::VectorXd& theta,
                                      const EigenOptions& options) {
  return top_eigenpairs([&](const Eigen::VectorXd& v) { return hessian_vector_product(field, theta, v); },
                        theta.size(), options);
}

LandscapeGrid landscape(const ScalarField& field, const Eigen::VectorXd& theta, const Eigen::VectorXd& v1,
                        const Eigen::VectorXd& v2, double half_range, int n) {
  if (n < 1 || n % 2 == 0) throw std::invalid_argument("landscape resolution must be odd");
  if (!(half_range > 0.0) || !std::isfinite(half_range)) throw std::invalid_argument("half range must be positive");
  if (v1.size() != theta.size() || v2.size() != theta.size()) {
    throw std::invalid_argument("landscape directions differ in size from parameters");
  }
  LandscapeGrid grid;
  grid.alpha.resize(n);
  for (int i = 0; i < n; ++i) grid.alpha[i] = n == 1 ? 0.0 : half_range * (2.0 * i - (n - 1)) / (n - 1);
  grid.beta = grid.alpha;
  grid.loss.resize(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      grid.loss(i, j) = value_at(field, theta + grid.alpha[i] * v1 + grid.beta[j] * v2);
    }
  }
  return grid;
}

LandscapeGrid hessian_landscape(const ScalarField& field, const Eigen::VectorXd& theta,
                                const LandscapeOptions& options) {
  EigenOptions eigen = options.eigen;
  eigen.count = 2;
  const std::vector<Eigenpair> pairs = top_eigenpairs(field, theta, eigen);
  const double r = options.half_range ? *options.half_range : 0.5 * theta.norm() / pairs[0].vector.norm();
  LandscapeGrid grid = landscape(field, theta, pairs[0].vector, pairs[1].vector, r, options.n);
  grid.lambda1 = pairs[0].value;
  grid.lambda2 = pairs[1].value;
  return grid;
}

double lipschitz_estimate(const LandscapeGrid& grid) {
  const int n = grid.n();
  double best = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i + 1 < n) {
        best = std::max(best, std::abs(grid.loss(i + 1, j) - grid.loss(i, j)) / (grid.alpha[i + 1] - grid.alpha[i]));
      }
      if (j + 1 < n) {
        best = std::max(best, std::abs(grid.loss(i, j + 1) - grid.loss(i, j)) / (grid.beta[j + 1] - grid.beta[j]));
      }
    }
  }
  return best;
}

void write_landscape_csv(std::ostream& out, const LandscapeGrid& grid) {
  out << "alpha,beta,loss\n";
  for (int i = 0; i < grid.n(); ++i) {
    for (int j = 0; j < grid.n(); ++j) {
      out << format_double(grid.alpha[i]) << ',' << format_double(grid.beta[j]) << ','
          << format_double(grid.loss(i, j)) << '\n';
    }
  }
}

}  // namespace pinnsformer
