#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pinnsformer/loss.hpp"

using namespace pinnsformer;

namespace {

constexpr double kPi = std::numbers::pi;

// u = sum_h a_h tanh(w_h x + v_h t + b_h) + c, with derivatives known in closed form.
struct TanhNet {
  Eigen::VectorXd a, w, v, b;
  double c = 0.0;

  explicit TanhNet(std::uint64_t seed, int hidden = 4) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (Eigen::VectorXd* p : {&a, &w, &v, &b}) {
      p->resize(hidden);
      for (int i = 0; i < hidden; ++i) (*p)[i] = d(rng);
    }
    c = d(rng);
  }

  FieldFn field() const {
    const DiffTensor wt({w.size()}, w.array()), vt({v.size()}, v.array()), bt({b.size()}, b.array()),
        at({a.size()}, a.array());
    const double offset = c;
    return [=](const std::vector<DiffTensor>& x) {
      return sum(at * tanh(x[0] * wt + x[1] * vt + bt), {-1}, true) + offset;
    };
  }
  double u(double x, double t) const {
    return (a.array() * (w.array() * x + v.array() * t + b.array()).tanh()).sum() + c;
  }
  double u_t(double x, double t) const {
    const Eigen::ArrayXd th = (w.array() * x + v.array() * t + b.array()).tanh();
    return (a.array() * v.array() * (1.0 - th.square())).sum();
  }
  double u_x(double x, double t) const {
    const Eigen::ArrayXd th = (w.array() * x + v.array() * t + b.array()).tanh();
    return (a.array() * w.array() * (1.0 - th.square())).sum();
  }
};

PointMatrix random_rows(Index n, std::uint64_t seed, double x_hi, double t_hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, x_hi), ut(0.0, t_hi);
  PointMatrix p(n, 2);
  for (Index i = 0; i < n; ++i) p.row(i) << ux(rng), ut(rng);
  return p;
}

CollocationSet small_set(std::uint64_t seed, Index n = 10) {
  CollocationSet s;
  s.residual = random_rows(n, seed, 2 * kPi, 1.0);
  s.boundary_lower = random_rows(n, seed + 1, 0.0, 1.0);
  s.boundary_upper = s.boundary_lower;
  s.boundary_upper.col(0).setConstant(2 * kPi);
  s.initial = random_rows(n, seed + 2, 2 * kPi, 0.0);
  return s;
}

// Two-parameter field u = theta0 sin(theta1 x + t).
class SineField final : public ParametricField {
 public:
  std::vector<Shape> parameter_shapes() const override { return {{1}, {1}}; }
  FieldFn bind(const std::vector<DiffTensor>& p) const override {
    return [p](const std::vector<DiffTensor>& x) { return p[0] * sin(p[1] * x[0] + x[1]); };
  }
  int steps() const override { return 0; }
};

// u = theta0 + theta1 x.
class AffineField final : public ParametricField {
 public:
  std::vector<Shape> parameter_shapes() const override { return {{1}, {1}}; }
  FieldFn bind(const std::vector<DiffTensor>& p) const override {
    return [p](const std::vector<DiffTensor>& x) { return p[0] + p[1] * x[0] + 0.0 * x[1]; };
  }
  int steps() const override { return 0; }
};

std::vector<DiffTensor> scalars(std::initializer_list<double> values) {
  std::vector<DiffTensor> out;
  for (double v : values) out.push_back(DiffTensor({1}, Values::Constant(1, v)));
  return out;
}

}  // namespace

TEST_CASE("pointwise loss: exact reaction solution and zero weights") {
  const PdeProblem react = reaction_problem(5.0);
  const FieldFn exact = [](const std::vector<DiffTensor>& v) {
    const double s = kPi / 4.0;
    const DiffTensor h = exp(-1.0 / (2 * s * s) * square(v[0] - kPi));
    const DiffTensor e = h * exp(5.0 * v[1]);
    return e / (e + 1.0 - h);
  };
  MeshSpec mesh;
  mesh.n_x = mesh.n_t = 26;
  mesh.n_bc = mesh.n_ic = 26;
  const CollocationSet colloc = sample_collocation(react, mesh);
  Graph graph;
  CHECK(physics_loss(react, exact, 0, 0.0, colloc, {}, graph).total.item() <= 1e-10);

  const TanhNet net(1);
  const LossTerms zero = physics_loss(react, net.field(), 0, 0.0, colloc, {0, 0, 0, 0}, graph);
  CHECK(zero.total.item() == 0.0);
  CHECK(zero.residual.item() > 0.0);
  CHECK_THROWS_AS(physics_loss(react, net.field(), 0, 0.0, CollocationSet{}, {}, graph), EmptyCollocation);
  CHECK_THROWS_AS(physics_loss(react, net.field(), 0, 0.0, colloc, {-1, 1, 1, 1}, graph), std::invalid_argument);
}

TEST_CASE("pointwise loss: random net against a hand-summed oracle") {
  const double beta = 3.0;
  const PdeProblem conv = convection_problem(beta);
  const TanhNet net(2);
  const CollocationSet s = small_set(5);
  Graph graph;
  const LossTerms terms = physics_loss(conv, net.field(), 0, 0.0, s, {1.0, 2.0, 0.5, 1.0}, graph);

  double res = 0, bc = 0, ic = 0;
  for (Index i = 0; i < 10; ++i) {
    const double r = net.u_t(s.residual(i, 0), s.residual(i, 1)) + beta * net.u_x(s.residual(i, 0), s.residual(i, 1));
    res += r * r / 10;
    const double b = net.u(0.0, s.boundary_lower(i, 1)) - net.u(2 * kPi, s.boundary_upper(i, 1));
    bc += b * b / 10;
    const double c = net.u(s.initial(i, 0), 0.0) - std::sin(s.initial(i, 0));
    ic += c * c / 10;
  }
  CHECK(std::abs(terms.residual.item() - res) <= 1e-12);
  CHECK(std::abs(terms.boundary.item() - bc) <= 1e-12);
  CHECK(std::abs(terms.initial.item() - ic) <= 1e-12);
  CHECK(std::abs(terms.total.item() - (res + 2 * bc + 0.5 * ic)) <= 1e-12);
}

TEST_CASE("sequential loss: k = 3 against a double-loop oracle") {
  const double beta = 2.0, dt = 0.05;
  const int k = 3;
  const PdeProblem conv = convection_problem(beta);
  const TanhNet net(3);
  const CollocationSet s = small_set(8);
  Graph graph;
  const LossTerms terms = physics_loss(conv, net.field(), k, dt, s, {}, graph);
  double res = 0, bc = 0, ic = 0;
  for (Index i = 0; i < 10; ++i) {
    for (int j = 0; j < k; ++j) {
      const double x = s.residual(i, 0), t = s.residual(i, 1) + j * dt;
      const double r = net.u_t(x, t) + beta * net.u_x(x, t);
      res += r * r / (k * 10);
      const double tb = s.boundary_lower(i, 1) + j * dt;
      const double b = net.u(0.0, tb) - net.u(2 * kPi, tb);
      bc += b * b / (k * 10);
    }
    const double c = net.u(s.initial(i, 0), 0.0) - std::sin(s.initial(i, 0));
    ic += c * c / 10;
  }
  CHECK(std::abs(terms.residual.item() - res) <= 1e-12);
  CHECK(std::abs(terms.boundary.item() - bc) <= 1e-12);
  CHECK(std::abs(terms.initial.item() - ic) <= 1e-12);
}

TEST_CASE("sequential loss with k = 1 equals the pointwise loss exactly") {
  const PdeProblem wave = wave_problem();
  const CollocationSet s = sample_collocation(wave, MeshSpec{.n_x = 11, .n_t = 11, .n_bc = 11, .n_ic = 11});
  const TanhNet net(4);
  Graph graph;
  const LossBreakdown a = physics_loss(wave, net.field(), 0, 0.0, s, {}, graph).values();
  const LossBreakdown b = physics_loss(wave, net.field(), 1, 1e-3, s, {}, graph).values();
  CHECK(a.residual == b.residual);
  CHECK(a.boundary == b.boundary);
  CHECK(a.initial == b.initial);
  CHECK(a.total == b.total);

  ModelSpec spec = ModelSpec::defaults(Architecture::pinnsformer);
  spec.k = 1;
  spec.embed_dim = 8;
  spec.feedforward_width = 8;
  spec.output_widths = {8};
  const ParamStore store = init_parameters(spec, 1);
  ParamBinder binder(store, nullptr);
  const auto model = build_network(spec, binder);
  const double p = pointwise_pinns_loss(*model, wave, s, {}, graph).total.item();
  const double q = sequential_pinnsformer_loss(*model, wave, s, {}, graph).total.item();
  CHECK(p == q);
}

TEST_CASE("sequential loss: initial term only sees step 0") {
  const PdeProblem conv = convection_problem(1.0);
  const CollocationSet s = small_set(9);
  const TanhNet net(5);
  const int k = 4;
  Graph graph;
  const DiffTensor offset = graph.variable({10, k, 1}, Values::Zero(10 * k));
  const FieldFn base = net.field();
  const FieldFn shifted = [&](const std::vector<DiffTensor>& x) {
    const DiffTensor u = base(x);
    return x[0].dim(0) == 10 ? u + offset : u;
  };
  // Only the initial set is evaluated with the offset; use it as the residual set too.
  CollocationSet ic_only = s;
  ic_only.residual = random_rows(3, 1, 1.0, 1.0);
  ic_only.boundary_lower = random_rows(3, 2, 0.0, 1.0);
  ic_only.boundary_upper = ic_only.boundary_lower;
  const LossTerms terms = physics_loss(conv, shifted, k, 0.01, ic_only, {}, graph);
  const DiffTensor g = grad(terms.initial, {offset})[0];
  for (Index i = 0; i < 10; ++i) {
    CHECK(g.at({i, 0, 0}) != 0.0);
    for (int j = 1; j < k; ++j) CHECK(g.at({i, j, 0}) == 0.0);
  }

  Values bump = Values::Zero(10 * k);
  for (Index i = 0; i < 10; ++i) {
    for (int j = 1; j < k; ++j) bump[i * k + j] = 0.3 * (j + i);
  }
  const DiffTensor perturbation({10, k, 1}, bump);
  const FieldFn perturbed = [&](const std::vector<DiffTensor>& x) {
    const DiffTensor u = base(x);
    return x[0].dim(0) == 10 ? u + perturbation : u;
  };
  Graph other;
  const double before = physics_loss(conv, base, k, 0.01, ic_only, {}, other).initial.item();
  const double after = physics_loss(conv, perturbed, k, 0.01, ic_only, {}, other).initial.item();
  CHECK(before == after);
}

TEST_CASE("loss is linear in the weights") {
  const PdeProblem conv = convection_problem(4.0);
  const CollocationSet s = small_set(10);
  const TanhNet net(6);
  Graph graph;
  const LossTerms one = physics_loss(conv, net.field(), 0, 0.0, s, {1, 1, 1, 1}, graph);
  const LossTerms two = physics_loss(conv, net.field(), 0, 0.0, s, {2, 1, 1, 1}, graph);
  CHECK(two.total.item() - one.total.item() == doctest::Approx(one.residual.item()).epsilon(1e-14));
  CHECK(one.residual.item() >= 0.0);
  CHECK(one.boundary.item() >= 0.0);
  CHECK(one.initial.item() >= 0.0);
}

TEST_CASE("ntk weights: symmetric traces and zero trace") {
  NtkTraces t;
  t.residual = 2.5;
  t.boundary = 2.5;
  t.initial = 2.5;
  const LossWeights w = ntk_weights(t);
  CHECK(w.residual == 3.0);
  CHECK(w.boundary == 3.0);
  CHECK(w.initial == 3.0);
  CHECK(w.data == 1.0);
  t.boundary = 0.0;
  CHECK_THROWS_AS(ntk_weights(t), ZeroTrace);
}

TEST_CASE("ntk traces: explicit Jacobian oracle on a two-parameter model") {
  const double beta = 1.5;
  const PdeProblem conv = convection_problem(beta);
  const CollocationSet s = small_set(11, 7);
  const double a = 0.8, w = 1.3;
  const NtkTraces t = ntk_traces(SineField{}, scalars({a, w}), conv, s, 200);

  // Rows of J for u = a sin(w x + t).
  Eigen::MatrixXd jr(7, 2), jb(7, 2), ji(7, 2);
  for (Index i = 0; i < 7; ++i) {
    const double x = s.residual(i, 0), tt = s.residual(i, 1);
    const double c = std::cos(w * x + tt), sn = std::sin(w * x + tt);
    // r = a cos(w x + t) (1 + beta w)
    jr.row(i) << c * (1 + beta * w), -a * sn * x * (1 + beta * w) + a * c * beta;
    const double tb = s.boundary_lower(i, 1), xu = s.boundary_upper(i, 0);
    jb.row(i) << std::sin(tb) - std::sin(w * xu + tb), -a * std::cos(w * xu + tb) * xu;
    const double xi = s.initial(i, 0);
    ji.row(i) << std::sin(w * xi), a * std::cos(w * xi) * xi;
  }
  auto mean_trace = [](const Eigen::MatrixXd& j) { return (j * j.transpose()).trace() / j.rows(); };
  CHECK(std::abs(*t.residual - mean_trace(jr)) <= 1e-10 * mean_trace(jr));
  CHECK(std::abs(*t.boundary - mean_trace(jb)) <= 1e-10 * mean_trace(jb));
  CHECK(std::abs(*t.initial - mean_trace(ji)) <= 1e-10 * mean_trace(ji));
  CHECK_FALSE(t.data.has_value());
}

TEST_CASE("ntk traces: scaling the residual by c scales its trace by c^2") {
  const CollocationSet s = small_set(12, 9);
  const auto params = scalars({0.4, -0.7});
  const NtkTraces base = ntk_traces(AffineField{}, params, convection_problem(1.0), s, 200);
  const NtkTraces scaled = ntk_traces(AffineField{}, params, convection_problem(3.0), s, 200);
  // r = beta theta1, so the residual trace is beta^2 and the others do not move.
  CHECK(*base.residual == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(*scaled.residual == doctest::Approx(9.0).epsilon(1e-14));
  CHECK(*scaled.boundary == *base.boundary);
  CHECK(*scaled.initial == *base.initial);
  CHECK(*base.boundary == doctest::Approx(4 * kPi * kPi).epsilon(1e-14));
  const LossWeights wb = ntk_weights(base);
  const LossWeights ws = ntk_weights(scaled);
  CHECK(ws.residual == doctest::Approx((9.0 + *base.boundary + *base.initial) / 9.0).epsilon(1e-14));
  CHECK(ws.residual < wb.residual);
}

TEST_CASE("ntk traces: sample cap and sequential fields") {
  ModelSpec spec = ModelSpec::defaults(Architecture::pinnsformer);
  spec.k = 3;
  spec.embed_dim = 4;
  spec.feedforward_width = 4;
  spec.output_widths = {4};
  const ParamStore store = init_parameters(spec, 2);
  const ModelField field(spec, store);
  const PdeProblem conv = convection_problem(1.0);
  const CollocationSet s = sample_collocation(conv, MeshSpec{.n_x = 5, .n_t = 5, .n_bc = 5, .n_ic = 5});
  const NtkTraces t = ntk_traces(field, store.bind(nullptr), conv, s, 4);
  CHECK(*t.residual > 0.0);
  CHECK(*t.boundary > 0.0);
  CHECK(*t.initial > 0.0);
  const LossWeights w = ntk_weights(t);
  CHECK(1.0 / w.residual + 1.0 / w.boundary + 1.0 / w.initial == doctest::Approx(1.0).epsilon(1e-12));
}
