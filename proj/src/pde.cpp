#include "pinnsformer/pde.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace pinnsformer {

namespace {

constexpr double kPi = std::numbers::pi;

// Column `c` of `points` shaped like a field component: [B, 1] or [B, 1, 1].
DiffTensor column_like(const PointMatrix& points, Index c, bool sequential) {
  Values v = points.col(c).array();
  const Index n = points.rows();
  return sequential ? DiffTensor({n, 1, 1}, std::move(v)) : DiffTensor({n, 1}, std::move(v));
}

DiffTensor values_like(const Eigen::VectorXd& values, bool sequential) {
  const Index n = values.size();
  return sequential ? DiffTensor({n, 1, 1}, values.array()) : DiffTensor({n, 1}, values.array());
}

}  // namespace

DiffTensor to_tensor(const PointMatrix& points) {
  Values v = Eigen::Map<const Values>(points.data(), points.size());
  return DiffTensor({points.rows(), points.cols()}, std::move(v));
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  for (int i = 0; i < n; ++i) out[i] = i == n - 1 ? hi : lo + (hi - lo) * i / (n - 1);
  return out;
}

// --- fields ----------------------------------------------------------------------------

std::vector<DiffTensor> coordinate_leaves(Graph& graph, const DiffTensor& points, int k, double dt) {
  if (k == 0) {
    std::vector<DiffTensor> leaves;
    for (const DiffTensor& column : split_columns(points)) leaves.push_back(graph.variable(column));
    return leaves;
  }
  return generate_pseudo_sequence(points, k, dt, &graph).coordinates;
}

FieldContext::FieldContext(std::vector<DiffTensor> coordinates, const FieldFn& field)
    : coordinates_(std::move(coordinates)), output_(field(coordinates_)) {}

DiffTensor FieldContext::value(int component) { return slice(output_, -1, component, 1); }

DiffTensor FieldContext::derivative(int component, std::vector<int> axes) {
  if (axes.empty()) return value(component);
  std::sort(axes.begin(), axes.end());
  const auto key = std::make_pair(component, axes);
  if (const auto it = cache_.find(key); it != cache_.end()) return it->second;
  const int last = axes.back();
  if (last < 0 || last >= static_cast<int>(coordinates_.size())) throw InvalidAxis("no coordinate " + std::to_string(last));
  axes.pop_back();
  const DiffTensor parent = derivative(component, axes);
  const DiffTensor& wrt = coordinates_[static_cast<std::size_t>(last)];
  DiffTensor d = parent.requires_grad() && wrt.requires_grad() ? grad(sum(parent), {wrt}, true)[0]
                                                               : DiffTensor::zeros(wrt.shape());
  cache_.emplace(key, d);
  return d;
}

FieldFn network_field(const Network& network) {
  return [&network](const std::vector<DiffTensor>& c) { return network.forward(c); };
}

FieldContext make_context(Graph& graph, const FieldFn& field, const PointMatrix& points, int k, double dt) {
  return FieldContext(coordinate_leaves(graph, to_tensor(points), k, dt), field);
}

// --- problems ----------------------------------------------------------------------------

ProblemKind parse_problem(std::string_view name) {
  if (name == "convection") return ProblemKind::convection;
  if (name == "reaction") return ProblemKind::reaction;
  if (name == "wave") return ProblemKind::wave;
  if (name == "navier-stokes" || name == "ns") return ProblemKind::navier_stokes;
  throw std::invalid_argument("unknown problem '" + std::string(name) + "'");
}

const char* to_string(ProblemKind kind) {
  switch (kind) {
    case ProblemKind::convection: return "convection";
    case ProblemKind::reaction: return "reaction";
    case ProblemKind::wave: return "wave";
    case ProblemKind::navier_stokes: return "navier-stokes";
  }
  return "unknown";
}

PdeProblem::PdeProblem(ProblemKind kind, Coefficients coefficients) : kind_(kind), coefficients_(coefficients) {
  for (double c : {coefficients.beta, coefficients.rho, coefficients.lambda1, coefficients.lambda2}) {
    if (!std::isfinite(c)) throw std::invalid_argument("problem coefficients must be finite");
  }
  switch (kind) {
    case ProblemKind::convection:
    case ProblemKind::reaction: bounds_ = {{0.0, 2.0 * kPi}, {0.0, 1.0}}; break;
    case ProblemKind::wave: bounds_ = {{0.0, 1.0}, {0.0, 1.0}}; break;
    case ProblemKind::navier_stokes: bounds_ = {{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}}; break;
  }
}

PdeProblem convection_problem(double beta) { return PdeProblem(ProblemKind::convection, {.beta = beta}); }
PdeProblem reaction_problem(double rho) { return PdeProblem(ProblemKind::reaction, {.rho = rho}); }
PdeProblem wave_problem(double beta, bool raw_coefficient) {
  return PdeProblem(ProblemKind::wave, {.beta = beta, .raw_wave_coefficient = raw_coefficient});
}
PdeProblem navier_stokes_problem(double lambda1, double lambda2) {
  return PdeProblem(ProblemKind::navier_stokes, {.lambda1 = lambda1, .lambda2 = lambda2});
}

double PdeProblem::wave_speed_squared() const { return coefficients_.raw_wave_coefficient ? coefficients_.beta : 4.0; }

double PdeProblem::initial_value(double x) const {
  switch (kind_) {
    case ProblemKind::convection: return std::sin(x);
    case ProblemKind::reaction: {
      const double s = kPi / 4.0;
      return std::exp(-(x - kPi) * (x - kPi) / (2.0 * s * s));
    }
    case ProblemKind::wave: return std::sin(kPi * x) + 0.5 * std::sin(coefficients_.beta * kPi * x);
    case ProblemKind::navier_stokes: break;
  }
  throw std::logic_error("no initial condition for " + name());
}

double PdeProblem::solution(double x, double t) const {
  const double beta = coefficients_.beta;
  switch (kind_) {
    case ProblemKind::convection: return std::sin(x - beta * t);
    case ProblemKind::reaction: {
      const double h = initial_value(x);
      const double e = h * std::exp(coefficients_.rho * t);
      return e / (e + 1.0 - h);
    }
    case ProblemKind::wave:
      return std::sin(kPi * x) * std::cos(2.0 * kPi * t) +
             0.5 * std::sin(beta * kPi * x) * std::cos(2.0 * beta * kPi * t);
    case ProblemKind::navier_stokes: break;
  }
  throw std::logic_error("no closed-form solution for " + name());
}

DiffTensor PdeProblem::velocity_u(FieldContext& field) const { return field.derivative(0, {1}); }
DiffTensor PdeProblem::velocity_v(FieldContext& field) const { return -field.derivative(0, {0}); }

std::vector<DiffTensor> PdeProblem::residual(FieldContext& f) const {
  const Coefficients& c = coefficients_;
  switch (kind_) {
    case ProblemKind::convection: return {f.derivative(0, {1}) + c.beta * f.derivative(0, {0})};
    case ProblemKind::reaction: {
      const DiffTensor u = f.value(0);
      return {f.derivative(0, {1}) - c.rho * u * (1.0 - u)};
    }
    case ProblemKind::wave: return {f.derivative(0, {1, 1}) - wave_speed_squared() * f.derivative(0, {0, 0})};
    case ProblemKind::navier_stokes: {
      // Coordinates (x, y, t); psi is component 0 and p component 1.
      const DiffTensor u = f.derivative(0, {1});
      const DiffTensor v = -f.derivative(0, {0});
      const DiffTensor u_t = f.derivative(0, {1, 2});
      const DiffTensor u_x = f.derivative(0, {0, 1});
      const DiffTensor u_y = f.derivative(0, {1, 1});
      const DiffTensor u_xx = f.derivative(0, {0, 0, 1});
      const DiffTensor u_yy = f.derivative(0, {1, 1, 1});
      const DiffTensor v_t = -f.derivative(0, {0, 2});
      const DiffTensor v_x = -f.derivative(0, {0, 0});
      const DiffTensor v_y = -f.derivative(0, {0, 1});
      const DiffTensor v_xx = -f.derivative(0, {0, 0, 0});
      const DiffTensor v_yy = -f.derivative(0, {0, 1, 1});
      const DiffTensor p_x = f.derivative(1, {0});
      const DiffTensor p_y = f.derivative(1, {1});
      return {u_t + c.lambda1 * (u * u_x + v * u_y) + p_x - c.lambda2 * (u_xx + u_yy),
              v_t + c.lambda1 * (u * v_x + v * v_y) + p_y - c.lambda2 * (v_xx + v_yy)};
    }
  }
  throw std::logic_error("unhandled problem");
}

std::vector<DiffTensor> PdeProblem::boundary(FieldContext& lower, FieldContext& upper) const {
  switch (kind_) {
    case ProblemKind::convection:
    case ProblemKind::reaction: return {lower.value(0) - upper.value(0)};
    case ProblemKind::wave: return {lower.value(0), upper.value(0)};
    case ProblemKind::navier_stokes: return {};
  }
  throw std::logic_error("unhandled problem");
}

std::vector<DiffTensor> PdeProblem::initial(FieldContext& f, const PointMatrix& points) const {
  if (kind_ == ProblemKind::navier_stokes) return {};
  Eigen::VectorXd target(points.rows());
  for (Index i = 0; i < points.rows(); ++i) target[i] = initial_value(points(i, 0));
  const DiffTensor misfit = f.value(0) - values_like(target, f.sequential());
  if (kind_ == ProblemKind::wave) return {misfit, f.derivative(0, {1})};
  return {misfit};
}

std::vector<DiffTensor> PdeProblem::data_misfit(FieldContext& f, const PointMatrix& observed) const {
  if (kind_ != ProblemKind::navier_stokes) return {};
  return {velocity_u(f) - column_like(observed, 0, f.sequential()),
          velocity_v(f) - column_like(observed, 1, f.sequential())};
}

// --- collocation ------------------------------------------------------------------------

PointMatrix grid_points(const PdeProblem& problem, int n_x, int n_t) {
  if (problem.spatial_dim() != 1) throw InvalidMeshSpec("grid meshes are defined for one spatial dimension");
  if (n_x < 1 || n_t < 1) throw InvalidMeshSpec("mesh counts must be >= 1");
  const auto xs = linspace(problem.bounds()[0].first, problem.bounds()[0].second, n_x);
  const auto ts = linspace(problem.bounds()[1].first, problem.bounds()[1].second, n_t);
  PointMatrix points(static_cast<Index>(n_x) * n_t, 2);
  Index row = 0;
  for (double t : ts) {
    for (double x : xs) {
      points(row, 0) = x;
      points(row, 1) = t;
      ++row;
    }
  }
  return points;
}

CollocationSet sample_collocation(const PdeProblem& problem, const MeshSpec& mesh, const NsDataset* data) {
  CollocationSet set;
  if (problem.kind() == ProblemKind::navier_stokes) {
    if (data == nullptr) throw InvalidMeshSpec("Navier-Stokes sampling needs a dataset");
    if (mesh.count < 1) throw InvalidMeshSpec("sample count must be >= 1");
    if (mesh.count > data->size()) {
      throw InvalidMeshSpec("requested " + std::to_string(mesh.count) + " samples from " +
                            std::to_string(data->size()) + " rows");
    }
    std::vector<Index> rows(static_cast<std::size_t>(data->size()));
    for (Index i = 0; i < data->size(); ++i) rows[i] = i;
    std::mt19937_64 rng(mesh.seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(mesh.count));
    set.residual.resize(mesh.count, 3);
    set.data_values.resize(mesh.count, 2);
    for (Index i = 0; i < mesh.count; ++i) {
      const Index r = rows[i];
      set.residual.row(i) << data->x[r], data->y[r], data->t[r];
      set.data_values.row(i) << data->u[r], data->v[r];
    }
    set.data_points = set.residual;
    return set;
  }

  if (mesh.n_bc < 1 || mesh.n_ic < 1) throw InvalidMeshSpec("boundary and initial counts must be >= 1");
  const auto [x_lo, x_hi] = problem.bounds()[0];
  const auto [t_lo, t_hi] = problem.bounds()[1];
  std::vector<double> bc_t;
  std::vector<double> ic_x;
  if (mesh.mode == MeshSpec::Mode::grid) {
    set.residual = grid_points(problem, mesh.n_x, mesh.n_t);
    bc_t = linspace(t_lo, t_hi, mesh.n_bc);
    ic_x = linspace(x_lo, x_hi, mesh.n_ic);
  } else {
    if (mesh.count < 1) throw InvalidMeshSpec("sample count must be >= 1");
    std::mt19937_64 rng(mesh.seed);
    std::uniform_real_distribution<double> ux(x_lo, x_hi);
    std::uniform_real_distribution<double> ut(t_lo, t_hi);
    set.residual.resize(mesh.count, 2);
    for (Index i = 0; i < mesh.count; ++i) {
      set.residual(i, 0) = ux(rng);
      set.residual(i, 1) = ut(rng);
    }
    for (int i = 0; i < mesh.n_bc; ++i) bc_t.push_back(ut(rng));
    for (int i = 0; i < mesh.n_ic; ++i) ic_x.push_back(ux(rng));
  }
  set.boundary_lower.resize(mesh.n_bc, 2);
  set.boundary_upper.resize(mesh.n_bc, 2);
  for (int i = 0; i < mesh.n_bc; ++i) {
    set.boundary_lower.row(i) << x_lo, bc_t[i];
    set.boundary_upper.row(i) << x_hi, bc_t[i];
  }
  set.initial.resize(mesh.n_ic, 2);
  for (int i = 0; i < mesh.n_ic; ++i) set.initial.row(i) << ic_x[i], t_lo;
  return set;
}

std::vector<DiffTensor> evaluate_residual(const PdeProblem& problem, const Network& network, const PointMatrix& points,
                                          Graph& graph) {
  const ModelSpec& spec = network.spec();
  FieldContext field = make_context(graph, network_field(network), points, spec.sequential() ? spec.k : 0, spec.dt);
  return problem.residual(field);
}

// --- datasets -----------------------------------------------------------------------------

std::pair<double, double> NsDataset::range(const Eigen::VectorXd& column) const {
  if (column.size() == 0) return {0.0, 0.0};
  return {column.minCoeff(), column.maxCoeff()};
}

NsDataset load_ns_dataset(const std::string& path, double lambda1, double lambda2) {
  std::ifstream in(path);
  if (!std::filesystem::exists(path) || !in) throw FileNotFound("cannot open dataset " + path);
  NsDataset data;
  std::string line;
  std::size_t line_number = 0;
  std::vector<std::array<double, 6>> rows;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    if (!header_seen) {
      std::vector<std::string> names;
      std::string name;
      while (fields >> name) names.push_back(name);
      if (names != std::vector<std::string>{"t", "x", "y", "u", "v", "p"}) {
        throw MalformedRow(line_number, "expected header 't x y u v p'");
      }
      header_seen = true;
      continue;
    }
    std::array<double, 6> row{};
    std::string token;
    for (double& value : row) {
      if (!(fields >> token)) throw MalformedRow(line_number, "expected 6 columns");
      const auto r = std::from_chars(token.data(), token.data() + token.size(), value);
      if (r.ec != std::errc() || r.ptr != token.data() + token.size() || !std::isfinite(value)) {
        throw MalformedRow(line_number, "bad number '" + token + "'");
      }
    }
    if (fields >> token) throw MalformedRow(line_number, "expected 6 columns");
    rows.push_back(row);
  }
  if (rows.empty()) data.warnings.push_back("dataset " + path + " has no records");
  const Index n = static_cast<Index>(rows.size());
  for (Eigen::VectorXd* column : {&data.t, &data.x, &data.y, &data.u, &data.v, &data.p}) column->resize(n);
  for (Index i = 0; i < n; ++i) {
    data.t[i] = rows[i][0];
    data.x[i] = rows[i][1];
    data.y[i] = rows[i][2];
    data.u[i] = rows[i][3];
    data.v[i] = rows[i][4];
    data.p[i] = rows[i][5];
  }
  data.fd_residual_bound = fd_residual_bound(data, lambda1, lambda2);
  return data;
}

void write_ns_dataset(const std::string& path, const NsDataset& data) {
  std::ofstream out(path);
  if (!out) throw FileNotFound("cannot write dataset " + path);
  out << "t x y u v p\n";
  for (Index i = 0; i < data.size(); ++i) {
    out << format_double(data.t[i]) << ' ' << format_double(data.x[i]) << ' ' << format_double(data.y[i]) << ' '
        << format_double(data.u[i]) << ' ' << format_double(data.v[i]) << ' ' << format_double(data.p[i]) << '\n';
  }
}

NsDataset taylor_green_dataset(int n_space, int n_time, double t_end, double nu) {
  if (n_space < 2 || n_time < 1) throw InvalidMeshSpec("Taylor-Green lattice too small");
  const auto xs = linspace(0.0, 2.0 * kPi, n_space);
  const auto ts = linspace(0.0, t_end, n_time);
  const Index n = static_cast<Index>(n_space) * n_space * n_time;
  NsDataset data;
  for (Eigen::VectorXd* column : {&data.t, &data.x, &data.y, &data.u, &data.v, &data.p}) column->resize(n);
  Index row = 0;
  for (double t : ts) {
    const double decay = std::exp(-2.0 * nu * t);
    for (double x : xs) {
      for (double y : xs) {
        data.t[row] = t;
        data.x[row] = x;
        data.y[row] = y;
        data.u[row] = -std::cos(x) * std::sin(y) * decay;
        data.v[row] = std::sin(x) * std::cos(y) * decay;
        data.p[row] = -0.25 * (std::cos(2 * x) + std::cos(2 * y)) * decay * decay;
        ++row;
      }
    }
  }
  data.fd_residual_bound = fd_residual_bound(data, 1.0, nu);
  return data;
}

std::optional<double> fd_residual_bound(const NsDataset& data, double lambda1, double lambda2) {
  auto unique_sorted = [](const Eigen::VectorXd& c) {
    std::vector<double> v(c.data(), c.data() + c.size());
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  };
  const auto ts = unique_sorted(data.t);
  const auto xs = unique_sorted(data.x);
  const auto ys = unique_sorted(data.y);
  if (ts.size() < 3 || xs.size() < 3 || ys.size() < 3) return std::nullopt;
  if (static_cast<Index>(ts.size() * xs.size() * ys.size()) != data.size()) return std::nullopt;
  auto uniform = [](const std::vector<double>& v) {
    const double h = v[1] - v[0];
    for (std::size_t i = 2; i < v.size(); ++i) {
      if (std::abs(v[i] - v[i - 1] - h) > 1e-9 * std::max(1.0, std::abs(h))) return false;
    }
    return true;
  };
  if (!uniform(ts) || !uniform(xs) || !uniform(ys)) return std::nullopt;

  const std::size_t nx = xs.size(), ny = ys.size();
  auto index_of = [](const std::vector<double>& v, double value) {
    return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), value) - v.begin());
  };
  std::vector<Index> at(ts.size() * nx * ny, -1);
  auto flat = [&](std::size_t it, std::size_t ix, std::size_t iy) { return (it * nx + ix) * ny + iy; };
  for (Index r = 0; r < data.size(); ++r) {
    const std::size_t slot = flat(index_of(ts, data.t[r]), index_of(xs, data.x[r]), index_of(ys, data.y[r]));
    if (at[slot] != -1) return std::nullopt;
    at[slot] = r;
  }
  const double ht = ts[1] - ts[0], hx = xs[1] - xs[0], hy = ys[1] - ys[0];
  double worst = 0.0;
  for (std::size_t it = 1; it + 1 < ts.size(); ++it) {
    for (std::size_t ix = 1; ix + 1 < nx; ++ix) {
      for (std::size_t iy = 1; iy + 1 < ny; ++iy) {
        auto val = [&](const Eigen::VectorXd& c, std::size_t a, std::size_t b, std::size_t d) { return c[at[flat(a, b, d)]]; };
        auto d_t = [&](const Eigen::VectorXd& c) { return (val(c, it + 1, ix, iy) - val(c, it - 1, ix, iy)) / (2 * ht); };
        auto d_x = [&](const Eigen::VectorXd& c) { return (val(c, it, ix + 1, iy) - val(c, it, ix - 1, iy)) / (2 * hx); };
        auto d_y = [&](const Eigen::VectorXd& c) { return (val(c, it, ix, iy + 1) - val(c, it, ix, iy - 1)) / (2 * hy); };
        auto d_xx = [&](const Eigen::VectorXd& c) {
          return (val(c, it, ix + 1, iy) - 2 * val(c, it, ix, iy) + val(c, it, ix - 1, iy)) / (hx * hx);
        };
        auto d_yy = [&](const Eigen::VectorXd& c) {
          return (val(c, it, ix, iy + 1) - 2 * val(c, it, ix, iy) + val(c, it, ix, iy - 1)) / (hy * hy);
        };
        const double u = val(data.u, it, ix, iy), v = val(data.v, it, ix, iy);
        const double f = d_t(data.u) + lambda1 * (u * d_x(data.u) + v * d_y(data.u)) + d_x(data.p) -
                         lambda2 * (d_xx(data.u) + d_yy(data.u));
        const double g = d_t(data.v) + lambda1 * (u * d_x(data.v) + v * d_y(data.v)) + d_y(data.p) -
                         lambda2 * (d_xx(data.v) + d_yy(data.v));
        worst = std::max({worst, std::abs(f), std::abs(g)});
      }
    }
  }
  return worst;
}

}  // namespace pinnsformer
