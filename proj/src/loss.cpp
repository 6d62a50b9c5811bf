#include "pinnsformer/loss.hpp"

#include <cmath>
#include <functional>

namespace pinnsformer {

namespace {

DiffTensor first_step(const DiffTensor& v) { return v.rank() == 3 ? slice(v, 1, 0, 1) : v; }

DiffTensor mean_square_sum(const std::vector<DiffTensor>& parts, bool step_zero_only) {
  DiffTensor acc;
  for (const DiffTensor& part : parts) {
    const DiffTensor m = mean(square(step_zero_only ? first_step(part) : part));
    acc = acc.defined() ? acc + m : m;
  }
  return acc.defined() ? acc : DiffTensor::scalar(0.0);
}

void require_rows(const PointMatrix& points, const char* what) {
  if (points.rows() == 0) throw EmptyCollocation(std::string("no ") + what + " points");
}

PointMatrix row_of(const PointMatrix& points, Index i) { return points.row(i); }

}  // namespace

void LossWeights::validate() const {
  for (double w : {residual, boundary, initial, data}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("loss weights must be finite and nonnegative");
  }
}

LossBreakdown LossTerms::values() const {
  return {residual.item(), boundary.item(), initial.item(), data.item(), total.item()};
}

LossTerms physics_loss(const PdeProblem& problem, const FieldFn& field, int steps, double dt,
                       const CollocationSet& colloc, const LossWeights& weights, Graph& graph) {
  weights.validate();
  require_rows(colloc.residual, "residual");
  LossTerms terms;
  FieldContext interior = make_context(graph, field, colloc.residual, steps, dt);
  terms.residual = mean_square_sum(problem.residual(interior), false);

  if (problem.has_boundary_terms()) {
    require_rows(colloc.boundary_lower, "boundary");
    require_rows(colloc.initial, "initial");
    if (colloc.boundary_upper.rows() != colloc.boundary_lower.rows()) {
      throw EmptyCollocation("boundary point sets are not paired");
    }
    FieldContext lower = make_context(graph, field, colloc.boundary_lower, steps, dt);
    FieldContext upper = make_context(graph, field, colloc.boundary_upper, steps, dt);
    terms.boundary = mean_square_sum(problem.boundary(lower, upper), false);
    FieldContext initial = make_context(graph, field, colloc.initial, steps, dt);
    terms.initial = mean_square_sum(problem.initial(initial, colloc.initial), true);
  } else {
    terms.boundary = DiffTensor::scalar(0.0);
    terms.initial = DiffTensor::scalar(0.0);
  }

  if (colloc.data_points.rows() > 0) {
    if (colloc.data_points == colloc.residual) {
      terms.data = mean_square_sum(problem.data_misfit(interior, colloc.data_values), true);
    } else {
      FieldContext observed = make_context(graph, field, colloc.data_points, steps, dt);
      terms.data = mean_square_sum(problem.data_misfit(observed, colloc.data_values), true);
    }
  } else {
    terms.data = DiffTensor::scalar(0.0);
  }

  terms.total = weights.residual * terms.residual + weights.boundary * terms.boundary +
                weights.initial * terms.initial + weights.data * terms.data;
  return terms;
}

LossTerms pointwise_pinns_loss(const Network& network, const PdeProblem& problem, const CollocationSet& colloc,
                               const LossWeights& weights, Graph& graph) {
  const ModelSpec& spec = network.spec();
  if (spec.sequential() && spec.k != 1) {
    throw std::invalid_argument("the pointwise loss needs a pointwise network or k = 1");
  }
  return physics_loss(problem, network_field(network), spec.sequential() ? 1 : 0, spec.dt, colloc, weights, graph);
}

LossTerms sequential_pinnsformer_loss(const Network& network, const PdeProblem& problem,
                                      const CollocationSet& colloc, const LossWeights& weights, Graph& graph) {
  const ModelSpec& spec = network.spec();
  if (!spec.sequential()) throw std::invalid_argument("the sequential loss needs a sequence model");
  return physics_loss(problem, network_field(network), spec.k, spec.dt, colloc, weights, graph);
}

// --- parameterized fields ---------------------------------------------------------------

ModelField::ModelField(ModelSpec spec, ParamStore layout) : spec_(std::move(spec)), layout_(std::move(layout)) {
  spec_.validate();
}

std::vector<Shape> ModelField::parameter_shapes() const {
  std::vector<Shape> shapes;
  for (const ParamEntry& e : layout_.entries()) shapes.push_back(e.shape);
  return shapes;
}

FieldFn ModelField::bind(const std::vector<DiffTensor>& params) const {
  ParamBinder binder(layout_, params);
  std::shared_ptr<const Network> network = build_network(spec_, binder);
  return [network](const std::vector<DiffTensor>& c) { return network->forward(c); };
}

std::vector<DiffTensor> unflatten(const Eigen::VectorXd& flat, const std::vector<Shape>& shapes, Graph* graph) {
  std::vector<DiffTensor> out;
  Index offset = 0;
  for (const Shape& shape : shapes) {
    const Index n = shape_size(shape);
    if (offset + n > flat.size()) throw IncompatibleShapes("flat parameter vector is too short");
    DiffTensor t(shape, flat.segment(offset, n).array());
    out.push_back(graph ? graph->variable(t) : t);
    offset += n;
  }
  if (offset != flat.size()) throw IncompatibleShapes("flat parameter vector is too long");
  return out;
}

// --- NTK -------------------------------------------------------------------------------------

namespace {

// Sum over the entries of `violations` of |d v / d params|^2, plus the entry count.
std::pair<double, Index> gradient_norms(const std::vector<DiffTensor>& violations,
                                        const std::vector<DiffTensor>& leaves) {
  double total = 0.0;
  Index rows = 0;
  for (const DiffTensor& v : violations) {
    for (Index e = 0; e < v.size(); ++e) {
      ++rows;
      if (!v.requires_grad()) continue;
      Values seed = Values::Zero(v.size());
      seed[e] = 1.0;
      for (const DiffTensor& g : grad(v, leaves, false, DiffTensor(v.shape(), std::move(seed)))) {
        total += g.values().square().sum();
      }
    }
  }
  return {total, rows};
}

std::vector<Index> strided(Index n, int cap) {
  std::vector<Index> picks;
  if (n <= cap) {
    for (Index i = 0; i < n; ++i) picks.push_back(i);
    return picks;
  }
  for (int j = 0; j < cap; ++j) picks.push_back(static_cast<Index>(static_cast<double>(j) * n / cap));
  return picks;
}

using Violations = std::function<std::vector<DiffTensor>(Graph&, const FieldFn&, Index)>;

std::optional<double> term_trace(const ParametricField& field, const std::vector<DiffTensor>& params, Index n, int cap,
                                 const Violations& violations) {
  if (n == 0) return std::nullopt;
  double total = 0.0;
  Index rows = 0;
  for (Index i : strided(n, cap)) {
    Graph graph;
    std::vector<DiffTensor> leaves;
    for (const DiffTensor& p : params) leaves.push_back(graph.variable(p.detach()));
    const FieldFn bound = field.bind(leaves);
    const auto [sq, count] = gradient_norms(violations(graph, bound, i), leaves);
    total += sq;
    rows += count;
  }
  return total / static_cast<double>(rows);
}

std::vector<DiffTensor> first_steps(std::vector<DiffTensor> parts) {
  for (DiffTensor& p : parts) p = first_step(p);
  return parts;
}

}  // namespace

NtkTraces ntk_traces(const ParametricField& field, const std::vector<DiffTensor>& params, const PdeProblem& problem,
                     const CollocationSet& colloc, int cap) {
  if (cap < 1) throw std::invalid_argument("NTK sample cap must be >= 1");
  const int k = field.steps();
  const double dt = field.step_size();
  NtkTraces traces;
  traces.residual = term_trace(field, params, colloc.residual.rows(), cap, [&](Graph& g, const FieldFn& f, Index i) {
    FieldContext ctx = make_context(g, f, row_of(colloc.residual, i), k, dt);
    return problem.residual(ctx);
  });
  if (problem.has_boundary_terms()) {
    traces.boundary =
        term_trace(field, params, colloc.boundary_lower.rows(), cap, [&](Graph& g, const FieldFn& f, Index i) {
          FieldContext lower = make_context(g, f, row_of(colloc.boundary_lower, i), k, dt);
          FieldContext upper = make_context(g, f, row_of(colloc.boundary_upper, i), k, dt);
          return problem.boundary(lower, upper);
        });
    traces.initial = term_trace(field, params, colloc.initial.rows(), cap, [&](Graph& g, const FieldFn& f, Index i) {
      const PointMatrix point = row_of(colloc.initial, i);
      FieldContext ctx = make_context(g, f, point, k, dt);
      return first_steps(problem.initial(ctx, point));
    });
  }
  if (colloc.data_points.rows() > 0) {
    traces.data = term_trace(field, params, colloc.data_points.rows(), cap, [&](Graph& g, const FieldFn& f, Index i) {
      FieldContext ctx = make_context(g, f, row_of(colloc.data_points, i), k, dt);
      return first_steps(problem.data_misfit(ctx, row_of(colloc.data_values, i)));
    });
  }
  return traces;
}

LossWeights ntk_weights(const NtkTraces& traces) {
  double total = 0.0;
  for (const auto& t : {traces.residual, traces.boundary, traces.initial, traces.data}) {
    if (!t) continue;
    if (!(*t > 0.0) || !std::isfinite(*t)) throw ZeroTrace("an NTK trace is zero or not finite");
    total += *t;
  }
  LossWeights w;
  if (traces.residual) w.residual = total / *traces.residual;
  if (traces.boundary) w.boundary = total / *traces.boundary;
  if (traces.initial) w.initial = total / *traces.initial;
  if (traces.data) w.data = total / *traces.data;
  return w;
}

LossWeights ntk_reweight(const ParametricField& field, const std::vector<DiffTensor>& params,
                         const PdeProblem& problem, const CollocationSet& colloc, int cap) {
  return ntk_weights(ntk_traces(field, params, problem, colloc, cap));
}

}  // namespace pinnsformer
