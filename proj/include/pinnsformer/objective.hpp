#pragma once

// Training objectives over flat parameter vectors, and the training loop that
// drives them with Adam or L-BFGS.

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pinnsformer/loss.hpp"
#include "pinnsformer/optim.hpp"

namespace pinnsformer {

// A scalar function of a parameter list, evaluated inside a caller-owned graph.
class ScalarField {
 public:
  virtual ~ScalarField() = default;
  virtual std::vector<Shape> parameter_shapes() const = 0;
  virtual DiffTensor evaluate(Graph& graph, const std::vector<DiffTensor>& params) const = 0;
};

Index parameter_count(const std::vector<Shape>& shapes);

// Value and flat gradient of a ScalarField.
double value_and_gradient(const ScalarField& field, const Eigen::VectorXd& theta, Eigen::VectorXd& gradient);
// Value only; parameters enter as constants.
double value_at(const ScalarField& field, const Eigen::VectorXd& theta);

// Weighted physics loss of a parametric field on a fixed collocation set.
class PinnObjective final : public ScalarField {
 public:
  PinnObjective(std::shared_ptr<const ParametricField> field, PdeProblem problem, CollocationSet colloc,
                LossWeights weights = {});

  std::vector<Shape> parameter_shapes() const override { return field_->parameter_shapes(); }
  DiffTensor evaluate(Graph& graph, const std::vector<DiffTensor>& params) const override;

  // Objective interface used by the optimizers.  Records the breakdown.
  double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd& gradient) const;
  LossBreakdown breakdown(const Eigen::VectorXd& theta) const;
  const LossBreakdown& last() const { return last_; }
  // Point of the most recent operator() call.
  const Eigen::VectorXd& last_point() const { return last_point_; }

  const LossWeights& weights() const { return weights_; }
  void set_weights(const LossWeights& weights);
  const ParametricField& field() const { return *field_; }
  const PdeProblem& problem() const { return problem_; }
  const CollocationSet& collocation() const { return colloc_; }
  Index dimension() const { return parameter_count(parameter_shapes()); }

 private:
  LossTerms terms(Graph& graph, const std::vector<DiffTensor>& params) const;

  std::shared_ptr<const ParametricField> field_;
  PdeProblem problem_;
  CollocationSet colloc_;
  LossWeights weights_;
  mutable LossBreakdown last_;
  mutable Eigen::VectorXd last_point_;
};

enum class OptimizerKind { adam, lbfgs };
OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

enum class Termination { converged, max_iters, diverged };
std::string to_string(Termination t);

struct TrainOptions {
  OptimizerKind optimizer = OptimizerKind::lbfgs;
  int iterations = 1000;
  AdamOptions adam;
  LbfgsOptions lbfgs;
  bool ntk = false;
  int ntk_refresh = 100;  // iterations between weight updates
  int ntk_cap = 200;      // points per term
};

struct IterationRecord {
  int iteration = 0;  // 0 is the initial point
  LossBreakdown loss;
  LossWeights weights;
  double seconds = 0.0;
  std::string status;
};

struct TrainResult {
  Eigen::VectorXd theta;
  std::vector<IterationRecord> history;
  Termination termination = Termination::max_iters;
  LossBreakdown final_loss;
  double seconds = 0.0;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

// Runs the optimizer from `theta`.  NTK weights, when enabled, are computed at
// iteration 0 and every `ntk_refresh` iterations.  A non-finite loss stops the
// run with Termination::diverged; `theta` is then the last finite iterate.
TrainResult train(PinnObjective& objective, Eigen::VectorXd theta, const TrainOptions& options,
                  const IterationCallback& callback = {});

}  // namespace pinnsformer
