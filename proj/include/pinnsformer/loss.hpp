#pragma once

// Physics-informed objectives: the pointwise loss, its pseudo-sequence
// counterpart and Neural Tangent Kernel based term weights.

#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pinnsformer/model.hpp"
#include "pinnsformer/pde.hpp"

namespace pinnsformer {

class EmptyCollocation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ZeroTrace : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double residual = 1.0;
  double boundary = 1.0;
  double initial = 1.0;
  double data = 1.0;

  void validate() const;
};

struct LossBreakdown {
  double residual = 0.0;
  double boundary = 0.0;
  double initial = 0.0;
  double data = 0.0;
  double total = 0.0;
};

// Graph-resident loss terms.  Terms a problem does not have are zero constants.
struct LossTerms {
  DiffTensor residual;
  DiffTensor boundary;
  DiffTensor initial;
  DiffTensor data;
  DiffTensor total;

  LossBreakdown values() const;
};

// Each term is the sum over its components of mean(v^2).  With steps > 0 the
// field sees pseudo sequences: residual and boundary means run over all steps,
// initial and data terms use step 0 only.  steps == 0 is the pointwise loss.
LossTerms physics_loss(const PdeProblem& problem, const FieldFn& field, int steps, double dt,
                       const CollocationSet& colloc, const LossWeights& weights, Graph& graph);

// Pointwise networks, or a PINNsFormer with k = 1.
LossTerms pointwise_pinns_loss(const Network& network, const PdeProblem& problem, const CollocationSet& colloc,
                               const LossWeights& weights, Graph& graph);
LossTerms sequential_pinnsformer_loss(const Network& network, const PdeProblem& problem,
                                      const CollocationSet& colloc, const LossWeights& weights, Graph& graph);

// --- parameterized fields -----------------------------------------------------------------

// A field whose parameters are supplied per evaluation, so callers can make
// them graph leaves, constants or perturbed copies.
class ParametricField {
 public:
  virtual ~ParametricField() = default;
  virtual std::vector<Shape> parameter_shapes() const = 0;
  virtual FieldFn bind(const std::vector<DiffTensor>& params) const = 0;
  // 0 for pointwise fields, k for pseudo sequences.
  virtual int steps() const = 0;
  virtual double step_size() const { return 0.0; }
};

class ModelField final : public ParametricField {
 public:
  ModelField(ModelSpec spec, ParamStore layout);
  std::vector<Shape> parameter_shapes() const override;
  FieldFn bind(const std::vector<DiffTensor>& params) const override;
  int steps() const override { return spec_.sequential() ? spec_.k : 0; }
  double step_size() const override { return spec_.dt; }
  const ModelSpec& spec() const { return spec_; }
  const ParamStore& layout() const { return layout_; }

 private:
  ModelSpec spec_;
  ParamStore layout_;
};

std::vector<DiffTensor> unflatten(const Eigen::VectorXd& flat, const std::vector<Shape>& shapes, Graph* graph);

// --- NTK weighting ---------------------------------------------------------------------------

// Mean diagonal of each term's kernel K = J J^T, where J stacks the parameter
// gradients of every scalar violation (one row per component, point and step).
struct NtkTraces {
  std::optional<double> residual;
  std::optional<double> boundary;
  std::optional<double> initial;
  std::optional<double> data;
};

// At most `cap` points per term, chosen with an even stride.
NtkTraces ntk_traces(const ParametricField& field, const std::vector<DiffTensor>& params, const PdeProblem& problem,
                     const CollocationSet& colloc, int cap);

// lambda_i = (sum of traces) / trace_i over the terms present; absent terms keep weight 1.
LossWeights ntk_weights(const NtkTraces& traces);

LossWeights ntk_reweight(const ParametricField& field, const std::vector<DiffTensor>& params,
                         const PdeProblem& problem, const CollocationSet& colloc, int cap);

}  // namespace pinnsformer
