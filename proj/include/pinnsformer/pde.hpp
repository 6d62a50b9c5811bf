#pragma once

// Benchmark problems: convection, 1D reaction, 1D wave and 2D Navier-Stokes.
// Coordinates are ordered spatial first, time last.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pinnsformer/model.hpp"
#include "pinnsformer/tensor.hpp"

namespace pinnsformer {

using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class InvalidMeshSpec : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FileNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedRow : public std::runtime_error {
 public:
  MalformedRow(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

DiffTensor to_tensor(const PointMatrix& points);

// --- fields and derivatives ------------------------------------------------------

using FieldFn = std::function<DiffTensor(const std::vector<DiffTensor>& coordinates)>;

// One coordinate leaf per input dimension, [B, 1] when k == 0 (pointwise) and
// [B, k, 1] pseudo sequences otherwise.
std::vector<DiffTensor> coordinate_leaves(Graph& graph, const DiffTensor& points, int k, double dt);

// Evaluates a field once and hands out its components and their partial
// derivatives, caching every derivative it builds.  A derivative with respect
// to a coordinate is that of the summed field, which for pseudo sequences
// collects the contributions of every step sharing that coordinate leaf.
class FieldContext {
 public:
  FieldContext(std::vector<DiffTensor> coordinates, const FieldFn& field);

  const std::vector<DiffTensor>& coordinates() const { return coordinates_; }
  const DiffTensor& output() const { return output_; }
  bool sequential() const { return output_.rank() == 3; }
  Index batch() const { return output_.dim(0); }

  DiffTensor value(int component);
  // Mixed partial; axes are coordinate indices, applied in sorted order.
  DiffTensor derivative(int component, std::vector<int> axes);

 private:
  std::vector<DiffTensor> coordinates_;
  DiffTensor output_;
  std::map<std::pair<int, std::vector<int>>, DiffTensor> cache_;
};

FieldFn network_field(const Network& network);
FieldContext make_context(Graph& graph, const FieldFn& field, const PointMatrix& points, int k, double dt);

// --- datasets ----------------------------------------------------------------------------

struct NsDataset {
  Eigen::VectorXd t, x, y, u, v, p;
  std::vector<std::string> warnings;
  // Largest central-difference momentum residual over interior lattice nodes,
  // present when the rows form a uniform (t, x, y) lattice.
  std::optional<double> fd_residual_bound;

  Index size() const { return t.size(); }
  std::pair<double, double> range(const Eigen::VectorXd& column) const;
};

// Whitespace-separated text with header `t x y u v p`.
NsDataset load_ns_dataset(const std::string& path, double lambda1 = 1.0, double lambda2 = 0.01);
void write_ns_dataset(const std::string& path, const NsDataset& data);

// Decaying Taylor-Green vortex on [0, 2pi]^2 sampled on an inclusive lattice;
// an exact solution of the momentum equations with lambda1 = 1, lambda2 = nu.
NsDataset taylor_green_dataset(int n_space, int n_time, double t_end, double nu);

std::optional<double> fd_residual_bound(const NsDataset& data, double lambda1, double lambda2);

// --- problems ------------------------------------------------------------------------------

enum class ProblemKind { convection, reaction, wave, navier_stokes };

ProblemKind parse_problem(std::string_view name);
const char* to_string(ProblemKind kind);

struct Coefficients {
  double beta = 0.0;
  double rho = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  // Wave only: use beta itself as the u_xx coefficient instead of the squared
  // speed 4 that the closed-form solution requires.
  bool raw_wave_coefficient = false;
};

class PdeProblem {
 public:
  PdeProblem(ProblemKind kind, Coefficients coefficients);

  ProblemKind kind() const { return kind_; }
  std::string name() const { return to_string(kind_); }
  const Coefficients& coefficients() const { return coefficients_; }
  int spatial_dim() const { return kind_ == ProblemKind::navier_stokes ? 2 : 1; }
  int input_dim() const { return spatial_dim() + 1; }
  // Navier-Stokes networks emit (psi, p).
  int output_dim() const { return kind_ == ProblemKind::navier_stokes ? 2 : 1; }
  // Closed intervals, one per coordinate.  Navier-Stokes bounds come from data.
  const std::vector<std::pair<double, double>>& bounds() const { return bounds_; }
  void set_bounds(std::vector<std::pair<double, double>> bounds) { bounds_ = std::move(bounds); }
  double wave_speed_squared() const;

  bool has_boundary_terms() const { return kind_ != ProblemKind::navier_stokes; }
  bool has_solution() const { return kind_ != ProblemKind::navier_stokes; }
  double solution(double x, double t) const;
  double initial_value(double x) const;

  std::vector<DiffTensor> residual(FieldContext& field) const;
  // Fields evaluated at the x_min and x_max boundary points, paired row by row.
  std::vector<DiffTensor> boundary(FieldContext& lower, FieldContext& upper) const;
  // `points` are the rows the field was evaluated at (used for targets).
  std::vector<DiffTensor> initial(FieldContext& field, const PointMatrix& points) const;
  // Velocity misfit against observations [N, 2] of (u, v).
  std::vector<DiffTensor> data_misfit(FieldContext& field, const PointMatrix& observed) const;

  // Navier-Stokes velocity from the stream function.
  DiffTensor velocity_u(FieldContext& field) const;
  DiffTensor velocity_v(FieldContext& field) const;

 private:
  ProblemKind kind_;
  Coefficients coefficients_;
  std::vector<std::pair<double, double>> bounds_;
};

PdeProblem convection_problem(double beta = 50.0);
PdeProblem reaction_problem(double rho = 5.0);
PdeProblem wave_problem(double beta = 3.0, bool raw_coefficient = false);
PdeProblem navier_stokes_problem(double lambda1 = 1.0, double lambda2 = 0.01);

// --- collocation --------------------------------------------------------------------------

struct MeshSpec {
  enum class Mode { grid, random };
  Mode mode = Mode::grid;
  int n_x = 51;
  int n_t = 51;
  int n_bc = 51;
  int n_ic = 51;
  int count = 2500;  // random residual points
  std::uint64_t seed = 0;
};

struct CollocationSet {
  PointMatrix residual;
  PointMatrix boundary_lower;  // x = x_min, paired with boundary_upper by row
  PointMatrix boundary_upper;  // x = x_max
  PointMatrix initial;         // t = t_min
  PointMatrix data_points;     // Navier-Stokes observations
  PointMatrix data_values;     // observed (u, v)
};

// Grid mode uses inclusive linspace meshes.  Navier-Stokes always draws
// `count` distinct rows from the dataset.
CollocationSet sample_collocation(const PdeProblem& problem, const MeshSpec& mesh, const NsDataset* data = nullptr);

// Inclusive n_x by n_t mesh, rows ordered with x varying fastest.
PointMatrix grid_points(const PdeProblem& problem, int n_x, int n_t);

std::vector<double> linspace(double lo, double hi, int n);

// Residual components of a network at `points`.
std::vector<DiffTensor> evaluate_residual(const PdeProblem& problem, const Network& network, const PointMatrix& points,
                                          Graph& graph);

}  // namespace pinnsformer
