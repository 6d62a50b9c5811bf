#pragma once

// Experiment commands behind the CLI: train, eval, landscape and sweep.
//
// Output files, all comma separated with a header row:
//   report.csv      per-iteration loss terms, weights and optimizer status
//   timing.csv      per-iteration wall clock (kept apart so report.csv is reproducible)
//   metrics.csv     rMAE / rRMSE per quantity on the test mesh
//   errorgrid.csv   per-point truth, prediction and absolute error
//   landscape.csv   alpha, beta, loss
//   summary.csv     one row per sweep cell
// plus config.ini (the configuration echo) and checkpoint.params.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pinnsformer/config.hpp"

namespace pinnsformer {

class CheckpointMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration, final loss weights and trained parameters.  On disk: the
// configuration sections, a [checkpoint] section, then `[parameters]`
// followed by ParamStore lines.
struct Checkpoint {
  RunConfig config;
  LossWeights weights;
  double final_loss = 0.0;
  Termination termination = Termination::max_iters;
  ParamStore params;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

struct Metric {
  std::string quantity;
  double rmae = 0.0;
  double rrmse = 0.0;
  Index points = 0;
};

struct ErrorRow {
  std::vector<double> coordinates;
  double truth = 0.0;
  double prediction = 0.0;
};

struct Evaluation {
  std::vector<Metric> metrics;  // first entry is the headline quantity
  std::vector<std::string> coordinate_names;
  std::vector<ErrorRow> errors;
};

struct RunReport {
  RunConfig config;
  std::vector<IterationRecord> history;
  LossBreakdown final_loss;
  Termination termination = Termination::max_iters;
  std::vector<Metric> metrics;
  double seconds = 0.0;
};

// Collocation points, problem and (for Navier-Stokes) observations of a configuration.
struct ProblemSetup {
  PdeProblem problem;
  std::optional<NsDataset> data;
  CollocationSet colloc;
};
ProblemSetup prepare_problem(const RunConfig& config);

PinnObjective make_objective(const RunConfig& config, const ProblemSetup& setup, const LossWeights& weights);

// Step-0 network outputs [N, out] at raw points.
Eigen::MatrixXd predict(const ModelSpec& spec, const ParamStore& params, const PointMatrix& points);

// Test-mesh metrics: the n_x by n_t eval mesh against the closed-form solution,
// or Navier-Stokes rows at the final observed time (p first, then u and v).
Evaluation evaluate(const RunConfig& config, const ProblemSetup& setup, const ParamStore& params);

// Metrics of `prediction` against `truth` on the same points.
Metric compare(const std::string& quantity, const Eigen::VectorXd& prediction, const Eigen::VectorXd& truth);

RunReport cmd_train(const RunConfig& config, const std::filesystem::path& out, std::ostream* log = nullptr);

// `config` defaults to the configuration stored in the checkpoint.
Evaluation cmd_eval(const std::filesystem::path& checkpoint, const std::optional<RunConfig>& config,
                    const std::filesystem::path& out);

struct LandscapeResult {
  LandscapeGrid grid;
  double lipschitz = 0.0;
  double checkpoint_loss = 0.0;
};
LandscapeResult cmd_landscape(const std::filesystem::path& checkpoint, const std::optional<RunConfig>& config,
                              const std::filesystem::path& out, std::ostream* log = nullptr);

struct SweepAxis {
  std::string name;  // activation, k, dt or any `section.key`
  std::vector<std::string> values;
};

struct SweepCell {
  std::vector<std::string> values;  // one per axis
  std::string status;               // converged, max-iters, diverged or error
  double loss = 0.0;
  double rmae = 0.0;
  double rrmse = 0.0;
  std::string message;
};

// One training per point of the Cartesian product of the axes, the last axis
// varying fastest.  Cell i trains in out/cell-<i>; failures are recorded in
// the table, never thrown.
std::vector<SweepCell> cmd_sweep(const RunConfig& config, const std::vector<SweepAxis>& axes,
                                 const std::filesystem::path& out, std::ostream* log = nullptr);
std::vector<SweepCell> cmd_sweep(const RunConfig& config, const std::string& axis,
                                 const std::vector<std::string>& values, const std::filesystem::path& out,
                                 std::ostream* log = nullptr);

std::string sweep_key(const std::string& axis);

}  // namespace pinnsformer
