#include "pinnsformer/objective.hpp"

#include <cmath>
#include <optional>

namespace pinnsformer {

Index parameter_count(const std::vector<Shape>& shapes) {
  Index n = 0;
  for (const Shape& s : shapes) n += shape_size(s);
  return n;
}

double value_and_gradient(const ScalarField& field, const Eigen::VectorXd& theta, Eigen::VectorXd& gradient) {
  Graph graph;
  const std::vector<DiffTensor> params = unflatten(theta, field.parameter_shapes(), &graph);
  const DiffTensor loss = field.evaluate(graph, params);
  if (loss.requires_grad()) {
    gradient = flatten(grad(loss, params));
  } else {
    gradient = Eigen::VectorXd::Zero(theta.size());
  }
  return loss.item();
}

double value_at(const ScalarField& field, const Eigen::VectorXd& theta) {
  Graph graph;
  return field.evaluate(graph, unflatten(theta, field.parameter_shapes(), nullptr)).item();
}

PinnObjective::PinnObjective(std::shared_ptr<const ParametricField> field, PdeProblem problem,
                             CollocationSet colloc, LossWeights weights)
    : field_(std::move(field)), problem_(std::move(problem)), colloc_(std::move(colloc)), weights_(weights) {
  if (!field_) throw std::invalid_argument("objective needs a field");
  weights_.validate();
}

void PinnObjective::set_weights(const LossWeights& weights) {
  weights.validate();
  weights_ = weights;
}

LossTerms PinnObjective::terms(Graph& graph, const std::vector<DiffTensor>& params) const {
  return physics_loss(problem_, field_->bind(params), field_->steps(), field_->step_size(), colloc_, weights_,
                      graph);
}

DiffTensor PinnObjective::evaluate(Graph& graph, const std::vector<DiffTensor>& params) const {
  return terms(graph, params).total;
}

double PinnObjective::operator()(const Eigen::VectorXd& theta, Eigen::VectorXd& gradient) const {
  Graph graph;
  const std::vector<DiffTensor> params = unflatten(theta, parameter_shapes(), &graph);
  const LossTerms t = terms(graph, params);
  last_ = t.values();
  last_point_ = theta;
  if (!std::isfinite(last_.total)) {
    gradient = Eigen::VectorXd::Constant(theta.size(), std::numeric_limits<double>::quiet_NaN());
    return last_.total;
  }
  gradient = t.total.requires_grad() ? flatten(grad(t.total, params)) : Eigen::VectorXd::Zero(theta.size());
  return last_.total;
}

LossBreakdown PinnObjective::breakdown(const Eigen::VectorXd& theta) const {
  Graph graph;
  return terms(graph, unflatten(theta, parameter_shapes(), nullptr)).values();
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "lbfgs" || name == "l-bfgs") return OptimizerKind::lbfgs;
  throw std::invalid_argument("unknown optimizer: " + name);
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "lbfgs"; }

std::string to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::max_iters: return "max-iters";
    case Termination::diverged: return "diverged";
  }
  return "unknown";
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

bool finite(const LossBreakdown& b) { return std::isfinite(b.total); }

}  // namespace

TrainResult train(PinnObjective& objective, Eigen::VectorXd theta, const TrainOptions& options,
                  const IterationCallback& callback) {
  if (options.iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (options.ntk && options.ntk_refresh < 1) throw std::invalid_argument("NTK refresh interval must be >= 1");
  const auto run_start = Clock::now();
  TrainResult result;
  const std::vector<Shape> shapes = objective.parameter_shapes();

  auto refresh_weights = [&] {
    objective.set_weights(
        ntk_reweight(objective.field(), unflatten(theta, shapes, nullptr), objective.problem(),
                     objective.collocation(), options.ntk_cap));
  };
  auto record = [&](int iteration, const LossBreakdown& loss, double seconds, const std::string& status) {
    IterationRecord r{iteration, loss, objective.weights(), seconds, status};
    result.history.push_back(r);
    if (callback) callback(r);
  };

  auto start = Clock::now();
  if (options.ntk) refresh_weights();
  Eigen::VectorXd gradient;
  objective(theta, gradient);
  LossBreakdown current = objective.last();
  record(0, current, seconds_since(start), finite(current) ? "ok" : "diverged");
  if (!finite(current)) {
    result.termination = Termination::diverged;
  }

  Adam<> adam(options.adam);
  std::optional<Lbfgs<>> lbfgs;
  auto objective_fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return objective(x, g); };

  for (int it = 1; it <= options.iterations && result.termination != Termination::diverged; ++it) {
    start = Clock::now();
    if (options.ntk && it > 1 && (it - 1) % options.ntk_refresh == 0) {
      refresh_weights();
      lbfgs.reset();
      objective(theta, gradient);
    }
    std::string status = "ok";
    if (options.optimizer == OptimizerKind::adam) {
      Eigen::VectorXd next = theta;
      try {
        adam.step(next, gradient);
      } catch (const NonFiniteGradient&) {
        result.termination = Termination::diverged;
        record(it, current, seconds_since(start), "diverged");
        break;
      }
      Eigen::VectorXd g;
      objective(next, g);
      if (!finite(objective.last()) || !all_finite(g)) {
        result.termination = Termination::diverged;
        record(it, objective.last(), seconds_since(start), "diverged");
        break;
      }
      theta = std::move(next);
      gradient = std::move(g);
      current = objective.last();
    } else {
      if (!lbfgs) lbfgs.emplace(options.lbfgs);
      Eigen::VectorXd next = theta;
      const StepReport report = lbfgs->step(objective_fn, next);
      status = to_string(report.status);
      if (report.status == StepStatus::diverged) {
        result.termination = Termination::diverged;
        record(it, objective.last(), seconds_since(start), "diverged");
        break;
      }
      if (report.status == StepStatus::converged) {
        result.termination = Termination::converged;
        break;
      }
      theta = std::move(next);
      gradient = lbfgs->gradient();
      current = objective.last_point() == theta ? objective.last() : objective.breakdown(theta);
      if (!finite(current)) {
        result.termination = Termination::diverged;
        record(it, current, seconds_since(start), "diverged");
        break;
      }
    }
    record(it, current, seconds_since(start), status);
  }

  result.theta = std::move(theta);
  result.final_loss = current;
  result.seconds = seconds_since(run_start);
  return result;
}

}  // namespace pinnsformer
