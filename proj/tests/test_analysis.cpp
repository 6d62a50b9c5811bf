#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <random>
#include <sstream>

#include "fd_oracle.hpp"
#include "pinnsformer/analysis.hpp"

using namespace pinnsformer;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// 1/2 theta^T A theta
class QuadraticField final : public ScalarField {
 public:
  explicit QuadraticField(MatrixXd a) : a_(std::move(a)) {}
  std::vector<Shape> parameter_shapes() const override { return {{a_.rows()}}; }
  DiffTensor evaluate(Graph&, const std::vector<DiffTensor>& p) const override {
    const Index n = a_.rows();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = a_;
    const DiffTensor a({n, n}, Eigen::Map<const Values>(row_major.data(), n * n));
    const DiffTensor ax = matmul(a, reshape(p[0], {n, 1}));
    return 0.5 * dot(reshape(p[0], {n, 1}), ax);
  }

 private:
  MatrixXd a_;
};

MatrixXd diagonal(std::initializer_list<double> d) {
  VectorXd v(static_cast<Index>(d.size()));
  Index i = 0;
  for (double x : d) v[i++] = x;
  return v.asDiagonal();
}

VectorXd random_vector(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

PinnObjective tiny_objective() {
  ModelSpec spec = ModelSpec::defaults(Architecture::pinnsformer);
  spec.k = 2;
  spec.dt = 1e-2;
  spec.embed_dim = 4;
  spec.feedforward_width = 4;
  spec.output_widths = {4};
  const PdeProblem problem = reaction_problem(5.0);
  const CollocationSet colloc = sample_collocation(problem, MeshSpec{.n_x = 4, .n_t = 3, .n_bc = 3, .n_ic = 4});
  return PinnObjective(std::make_shared<ModelField>(spec, init_parameters(spec, 5)), problem, colloc);
}

}  // namespace

TEST_CASE("rmae and rrmse: hand cases, scaling and degenerate truth") {
  const VectorXd truth = (VectorXd(2) << 1.0, 1.0).finished();
  const VectorXd pred = (VectorXd(2) << 2.0, 0.0).finished();
  CHECK(rmae(truth, truth) == 0.0);
  CHECK(rrmse(truth, truth) == 0.0);
  CHECK(rmae(pred, truth) == 1.0);
  CHECK(rrmse(pred, truth) == 1.0);

  const VectorXd u = random_vector(50, 1);
  const VectorXd p = u + 0.1 * random_vector(50, 2);
  for (double c : {1e-3, 2.5, 1e4}) {
    CHECK(rmae(VectorXd(c * p), VectorXd(c * u)) == doctest::Approx(rmae(p, u)).epsilon(1e-12));
    CHECK(rrmse(VectorXd(c * p), VectorXd(c * u)) == doctest::Approx(rrmse(p, u)).epsilon(1e-12));
  }
  CHECK(rrmse(p, u) > 0.0);
  CHECK(rmae(Eigen::ArrayXd(p.array()), Eigen::ArrayXd(u.array())) == rmae(p, u));
  CHECK_THROWS_AS(rmae(pred, VectorXd::Zero(2)), ZeroDenominator);
  CHECK_THROWS_AS(rrmse(pred, VectorXd::Zero(2)), ZeroDenominator);
  CHECK_THROWS_AS(rmae(pred, VectorXd::Ones(3)), std::invalid_argument);
}

TEST_CASE("hvp: constant Hessian of a quadratic") {
  const QuadraticField q(diagonal({3.0, 1.0}));
  const VectorXd theta = (VectorXd(2) << 0.4, -2.0).finished();
  const VectorXd v = (VectorXd(2) << 1.5, -0.5).finished();
  const VectorXd hv = hessian_vector_product(q, theta, v);
  CHECK(hv[0] == doctest::Approx(4.5).epsilon(1e-15));
  CHECK(hv[1] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK_THROWS_AS(hessian_vector_product(q, theta, VectorXd::Zero(2)), std::invalid_argument);
}

TEST_CASE("hvp: symmetry, linearity and gradient differences on a network loss") {
  const PinnObjective objective = tiny_objective();
  const VectorXd theta = random_vector(objective.dimension(), 3) * 0.3;
  const VectorXd u = random_vector(theta.size(), 4);
  const VectorXd v = random_vector(theta.size(), 5);
  const VectorXd hu = hessian_vector_product(objective, theta, u);
  const VectorXd hv = hessian_vector_product(objective, theta, v);
  CHECK(testing::relative_error(u.dot(hv), v.dot(hu)) <= 1e-8);

  const VectorXd combo = hessian_vector_product(objective, theta, VectorXd(2.0 * u - 3.0 * v));
  CHECK(testing::relative_error(combo, VectorXd(2.0 * hu - 3.0 * hv)) <= 1e-9);

  const double eps = 1e-5;
  VectorXd g_plus, g_minus;
  value_and_gradient(objective, theta + eps * v, g_plus);
  value_and_gradient(objective, theta - eps * v, g_minus);
  CHECK(testing::relative_error(hv, VectorXd((g_plus - g_minus) / (2.0 * eps))) <= 1e-4);
}

TEST_CASE("eigenpairs: diagonal Hessian and deflation") {
  const QuadraticField q(diagonal({4.0, 1.0, 0.5}));
  const auto pairs = top_eigenpairs(q, VectorXd::Zero(3));
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].value == doctest::Approx(4.0).epsilon(1e-4));
  CHECK(pairs[1].value == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(std::abs(pairs[0].vector[0]) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(std::abs(pairs[1].vector[1]) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(std::abs(pairs[0].vector.dot(pairs[1].vector)) <= 1e-6);
  for (const Eigenpair& p : pairs) {
    CHECK(p.converged);
    CHECK(p.vector.norm() == doctest::Approx(1.0).epsilon(1e-12));
    const VectorXd hv = hessian_vector_product(q, VectorXd::Zero(3), p.vector);
    CHECK((hv - p.value * p.vector).norm() <= 1e-4 * std::abs(p.value));
  }
}

TEST_CASE("eigenpairs: random symmetric matrix against a dense eigensolver") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> d;
  MatrixXd m(10, 10);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  const MatrixXd a = 0.5 * (m + m.transpose());

  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(a);
  std::vector<double> by_magnitude(solver.eigenvalues().data(), solver.eigenvalues().data() + 10);
  std::sort(by_magnitude.begin(), by_magnitude.end(), [](double x, double y) { return std::abs(x) > std::abs(y); });

  const auto pairs = top_eigenpairs([&](const VectorXd& v) { return VectorXd(a * v); }, 10);
  for (int i = 0; i < 2; ++i) {
    INFO("pair ", i, " residual ", pairs[i].residual);
    CHECK(pairs[i].converged);
    CHECK(testing::relative_error(pairs[i].value, by_magnitude[static_cast<std::size_t>(i)]) <= 1e-6);
  }
}

TEST_CASE("eigenpairs: exhausted iterations are flagged, not thrown") {
  const QuadraticField q(diagonal({1.0, 0.99, 0.5}));
  const auto pairs = top_eigenpairs(q, VectorXd::Zero(3), {.count = 1, .iterations = 2, .tolerance = 1e-12});
  REQUIRE(pairs.size() == 1);
  CHECK_FALSE(pairs[0].converged);
  CHECK(pairs[0].residual > 1e-12);
  CHECK_THROWS_AS(top_eigenpairs(q, VectorXd::Zero(3), {.count = 0}), std::invalid_argument);
}

TEST_CASE("landscape: quadratic closed form, symmetry and center") {
  const QuadraticField q(diagonal({4.0, 1.0}));
  const VectorXd theta = VectorXd::Zero(2);
  const VectorXd e1 = VectorXd::Unit(2, 0), e2 = VectorXd::Unit(2, 1);
  const LandscapeGrid grid = landscape(q, theta, e1, e2, 1.0, 41);
  REQUIRE(grid.n() == 41);
  CHECK(grid.alpha[20] == 0.0);
  CHECK(grid.center() == value_at(q, theta));
  for (int i = 0; i < 41; ++i) {
    for (int j = 0; j < 41; ++j) {
      const double a = grid.alpha[i], b = grid.beta[j];
      CHECK(grid.loss(i, j) == doctest::Approx(0.5 * (4 * a * a + b * b)).epsilon(1e-14));
      CHECK(grid.loss(i, j) == grid.loss(40 - i, 40 - j));
    }
  }
  // Axis-adjacent secant slopes peak at the edge: 2 (1 + (1 - h)) = 4 - 2h.
  const double h = 2.0 / 40.0;
  CHECK(std::abs(lipschitz_estimate(grid) - 4.0) <= 2.0 * h + 1e-12);

  std::ostringstream csv;
  write_landscape_csv(csv, grid);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "alpha,beta,loss");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 41 * 41);
  CHECK_THROWS_AS(landscape(q, theta, e1, e2, 1.0, 40), std::invalid_argument);
  CHECK_THROWS_AS(landscape(q, theta, e1, e2, 0.0, 41), std::invalid_argument);
}

TEST_CASE("landscape: trained network parameters are left untouched") {
  const PinnObjective objective = tiny_objective();
  const VectorXd theta = random_vector(objective.dimension(), 6) * 0.3;
  const VectorXd copy = theta;
  const LandscapeGrid grid = hessian_landscape(objective, theta, {.n = 3, .eigen = {.iterations = 5}});
  CHECK(theta == copy);
  CHECK(grid.center() == value_at(objective, theta));
  CHECK(std::abs(grid.alpha[2] - 0.5 * theta.norm()) <= 1e-12 * theta.norm());
  CHECK(std::abs(grid.lambda1) >= std::abs(grid.lambda2));
}

TEST_CASE("lipschitz: constant and linear ramp grids") {
  LandscapeGrid grid;
  grid.alpha = VectorXd::LinSpaced(5, -1.0, 1.0);
  grid.beta = grid.alpha;
  grid.loss = MatrixXd::Constant(5, 5, 3.0);
  CHECK(lipschitz_estimate(grid) == 0.0);
  for (int i = 0; i < 5; ++i) grid.loss.row(i).setConstant(grid.alpha[i]);
  CHECK(lipschitz_estimate(grid) == doctest::Approx(1.0).epsilon(1e-14));
}
