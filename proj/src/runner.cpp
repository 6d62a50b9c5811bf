#include "pinnsformer/runner.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace pinnsformer {

namespace fs = std::filesystem;

namespace {

constexpr Index kChunk = 512;

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string model_section(const RunConfig& config) {
  std::istringstream in(to_ini(config));
  std::string line, section, out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.front() == '[') section = line;
    if (section == "[model]") out += line + '\n';
  }
  return out;
}

// Rows [begin, begin + n) of `points`.
PointMatrix rows(const PointMatrix& points, Index begin, Index n) { return points.middleRows(begin, n); }

// Step-0 entries of a [B, 1] or [B, k, 1] tensor.
Eigen::VectorXd first_step_values(const DiffTensor& t) {
  const Index b = t.dim(0);
  const Index stride = t.size() / b;
  Eigen::VectorXd out(b);
  for (Index i = 0; i < b; ++i) out[i] = t.values()[i * stride];
  return out;
}

// Rows at the final observed time, at most `wanted` of them.
std::vector<Index> final_time_rows(const NsDataset& data, Index wanted) {
  const double t_end = data.t.maxCoeff();
  std::vector<Index> picks;
  for (Index i = 0; i < data.size() && static_cast<Index>(picks.size()) < wanted; ++i) {
    if (data.t[i] == t_end) picks.push_back(i);
  }
  return picks;
}

Evaluation evaluate_navier_stokes(const RunConfig& config, const ProblemSetup& setup, const ParamStore& params) {
  const NsDataset& data = *setup.data;
  const std::vector<Index> picks =
      final_time_rows(data, static_cast<Index>(config.eval.n_x) * static_cast<Index>(config.eval.n_t));
  const Index n = static_cast<Index>(picks.size());
  PointMatrix points(n, 3);
  Eigen::VectorXd u(n), v(n), p(n);
  for (Index i = 0; i < n; ++i) {
    const Index r = picks[static_cast<std::size_t>(i)];
    points.row(i) << data.x[r], data.y[r], data.t[r];
    u[i] = data.u[r];
    v[i] = data.v[r];
    p[i] = data.p[r];
  }
  ParamBinder binder(params, nullptr);
  const std::unique_ptr<Network> net = build_network(config.model, binder);
  const FieldFn field = network_field(*net);
  const int steps = config.model.sequential() ? config.model.k : 0;
  Eigen::VectorXd pu(n), pv(n), pp(n);
  for (Index begin = 0; begin < n; begin += kChunk) {
    const Index len = std::min(kChunk, n - begin);
    Graph graph;
    FieldContext ctx = make_context(graph, field, rows(points, begin, len), steps, config.model.dt);
    pu.segment(begin, len) = first_step_values(setup.problem.velocity_u(ctx));
    pv.segment(begin, len) = first_step_values(setup.problem.velocity_v(ctx));
    pp.segment(begin, len) = first_step_values(ctx.value(1));
  }
  Evaluation e;
  e.metrics = {compare("p", pp, p), compare("u", pu, u), compare("v", pv, v)};
  e.coordinate_names = {"x", "y", "t"};
  for (Index i = 0; i < n; ++i) e.errors.push_back({{points(i, 0), points(i, 1), points(i, 2)}, p[i], pp[i]});
  return e;
}

void write_report(const fs::path& dir, const std::vector<IterationRecord>& history) {
  std::ofstream report = open_output(dir / "report.csv");
  report << "iteration,residual,boundary,initial,data,total,w_residual,w_boundary,w_initial,w_data,status\n";
  std::ofstream timing = open_output(dir / "timing.csv");
  timing << "iteration,seconds\n";
  for (const IterationRecord& r : history) {
    report << r.iteration << ',' << format_double(r.loss.residual) << ',' << format_double(r.loss.boundary) << ','
           << format_double(r.loss.initial) << ',' << format_double(r.loss.data) << ','
           << format_double(r.loss.total) << ',' << format_double(r.weights.residual) << ','
           << format_double(r.weights.boundary) << ',' << format_double(r.weights.initial) << ','
           << format_double(r.weights.data) << ',' << r.status << '\n';
    timing << r.iteration << ',' << format_double(r.seconds) << '\n';
  }
}

void write_evaluation(const fs::path& dir, const Evaluation& e) {
  std::ofstream metrics = open_output(dir / "metrics.csv");
  metrics << "quantity,rmae,rrmse,points\n";
  for (const Metric& m : e.metrics) {
    metrics << m.quantity << ',' << format_double(m.rmae) << ',' << format_double(m.rrmse) << ',' << m.points << '\n';
  }
  std::ofstream grid = open_output(dir / "errorgrid.csv");
  for (const std::string& c : e.coordinate_names) grid << c << ',';
  grid << "truth,pred,abs_error\n";
  for (const ErrorRow& r : e.errors) {
    for (double c : r.coordinates) grid << format_double(c) << ',';
    grid << format_double(r.truth) << ',' << format_double(r.prediction) << ','
         << format_double(std::abs(r.prediction - r.truth)) << '\n';
  }
}

void write_config_echo(const fs::path& dir, const RunConfig& config) {
  std::ofstream out = open_output(dir / "config.ini");
  write_config(out, config);
}

Termination parse_termination(const std::string& s) {
  if (s == "converged") return Termination::converged;
  if (s == "max-iters") return Termination::max_iters;
  if (s == "diverged") return Termination::diverged;
  throw CheckpointMismatch("unknown termination '" + s + "' in checkpoint");
}

RunConfig resolve_config(const Checkpoint& ck, const std::optional<RunConfig>& config) {
  if (!config) return ck.config;
  if (config->problem != ck.config.problem) {
    throw CheckpointMismatch("checkpoint was trained on " + std::string(to_string(ck.config.problem)) +
                             ", configuration asks for " + to_string(config->problem));
  }
  if (model_section(*config) != model_section(ck.config)) {
    throw CheckpointMismatch("configuration [model] section differs from the checkpoint");
  }
  return *config;
}

}  // namespace

// --- checkpoints ------------------------------------------------------------------------------

void write_checkpoint(const fs::path& path, const Checkpoint& ck) {
  std::ofstream out = open_output(path);
  write_config(out, ck.config);
  out << "\n[checkpoint]\n"
      << "final_loss = " << format_double(ck.final_loss) << '\n'
      << "termination = " << to_string(ck.termination) << '\n'
      << "w_residual = " << format_double(ck.weights.residual) << '\n'
      << "w_boundary = " << format_double(ck.weights.boundary) << '\n'
      << "w_initial = " << format_double(ck.weights.initial) << '\n'
      << "w_data = " << format_double(ck.weights.data) << '\n'
      << "\n[parameters]\n";
  ck.params.write(out);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  const auto state_at = text.find("\n[checkpoint]\n");
  const auto params_at = text.find("\n[parameters]\n");
  if (state_at == std::string::npos || params_at == std::string::npos || params_at < state_at) {
    throw CheckpointMismatch(path.string() + " is not a checkpoint");
  }
  Checkpoint ck;
  std::istringstream config_text(text.substr(0, state_at));
  ck.config = parse_config(config_text);

  namespace pt = boost::property_tree;
  pt::ptree state;
  std::istringstream state_text(text.substr(state_at, params_at - state_at));
  try {
    pt::read_ini(state_text, state);
    ck.final_loss = std::stod(state.get<std::string>("checkpoint.final_loss"));
    ck.termination = parse_termination(state.get<std::string>("checkpoint.termination"));
    ck.weights.residual = std::stod(state.get<std::string>("checkpoint.w_residual"));
    ck.weights.boundary = std::stod(state.get<std::string>("checkpoint.w_boundary"));
    ck.weights.initial = std::stod(state.get<std::string>("checkpoint.w_initial"));
    ck.weights.data = std::stod(state.get<std::string>("checkpoint.w_data"));
  } catch (const pt::ptree_error& e) {
    throw CheckpointMismatch(std::string("checkpoint state: ") + e.what());
  }

  std::istringstream params_text(text.substr(params_at + std::string("\n[parameters]\n").size()));
  ck.params = ParamStore::read(params_text);
  const ParamStore layout = init_parameters(ck.config.model, 0);
  if (layout.count() != ck.params.count()) throw CheckpointMismatch("checkpoint parameter count differs from model");
  for (std::size_t i = 0; i < layout.count(); ++i) {
    const ParamEntry& want = layout.entries()[i];
    const ParamEntry& got = ck.params.entries()[i];
    if (want.name != got.name || want.shape != got.shape) {
      throw CheckpointMismatch("checkpoint parameter " + got.name + " does not fit the model (expected " +
                               want.name + " " + to_string(want.shape) + ")");
    }
  }
  return ck;
}

// --- evaluation -----------------------------------------------------------------------------------

ProblemSetup prepare_problem(const RunConfig& config) {
  config.validate();
  MeshSpec mesh = config.mesh;
  mesh.seed = config.seed;
  if (config.problem == ProblemKind::navier_stokes) {
    if (config.dataset.empty()) throw ConfigError("problem.dataset is required for navier-stokes");
    NsDataset data = load_ns_dataset(config.dataset, config.coefficients.lambda1, config.coefficients.lambda2);
    PdeProblem problem = make_problem(config, &data);
    CollocationSet colloc = sample_collocation(problem, mesh, &data);
    return {std::move(problem), std::move(data), std::move(colloc)};
  }
  PdeProblem problem = make_problem(config);
  CollocationSet colloc = sample_collocation(problem, mesh);
  return {std::move(problem), std::nullopt, std::move(colloc)};
}

PinnObjective make_objective(const RunConfig& config, const ProblemSetup& setup, const LossWeights& weights) {
  auto field = std::make_shared<ModelField>(config.model, init_parameters(config.model, config.seed));
  return PinnObjective(std::move(field), setup.problem, setup.colloc, weights);
}

Eigen::MatrixXd predict(const ModelSpec& spec, const ParamStore& params, const PointMatrix& points) {
  ParamBinder binder(params, nullptr);
  const std::unique_ptr<Network> net = build_network(spec, binder);
  const Index n = points.rows();
  Eigen::MatrixXd out(n, spec.output_dim);
  for (Index begin = 0; begin < n; begin += kChunk) {
    const Index len = std::min(kChunk, n - begin);
    const DiffTensor x = to_tensor(rows(points, begin, len));
    const DiffTensor y = spec.sequential()
                             ? extract_solution(net->forward(generate_pseudo_sequence(x, spec.k, spec.dt).coordinates))
                             : net->forward(split_columns(x));
    for (Index i = 0; i < len; ++i) {
      for (int c = 0; c < spec.output_dim; ++c) out(begin + i, c) = y.values()[i * spec.output_dim + c];
    }
  }
  return out;
}

Metric compare(const std::string& quantity, const Eigen::VectorXd& prediction, const Eigen::VectorXd& truth) {
  return {quantity, rmae(prediction, truth), rrmse(prediction, truth), truth.size()};
}

Evaluation evaluate(const RunConfig& config, const ProblemSetup& setup, const ParamStore& params) {
  if (config.problem == ProblemKind::navier_stokes) return evaluate_navier_stokes(config, setup, params);
  const PointMatrix mesh = grid_points(setup.problem, config.eval.n_x, config.eval.n_t);
  Eigen::VectorXd truth(mesh.rows());
  for (Index i = 0; i < mesh.rows(); ++i) truth[i] = setup.problem.solution(mesh(i, 0), mesh(i, 1));
  const Eigen::VectorXd pred = predict(config.model, params, mesh).col(0);
  Evaluation e;
  e.metrics = {compare("u", pred, truth)};
  e.coordinate_names = {"x", "t"};
  for (Index i = 0; i < mesh.rows(); ++i) e.errors.push_back({{mesh(i, 0), mesh(i, 1)}, truth[i], pred[i]});
  return e;
}

// --- commands -----------------------------------------------------------------------------------

RunReport cmd_train(const RunConfig& config, const fs::path& out, std::ostream* log) {
  const ProblemSetup setup = prepare_problem(config);
  fs::create_directories(out);
  write_config_echo(out, config);

  ParamStore params = init_parameters(config.model, config.seed);
  PinnObjective objective = make_objective(config, setup, config.weights);
  const TrainResult result = train(objective, params.flatten(), config.train, [&](const IterationRecord& r) {
    if (log && (r.iteration % 10 == 0 || r.status != "ok")) {
      *log << "iter " << r.iteration << " loss " << format_double(r.loss.total) << ' ' << r.status << std::endl;
    }
  });
  params.assign(result.theta);

  RunReport report;
  report.config = config;
  report.history = result.history;
  report.final_loss = result.final_loss;
  report.termination = result.termination;
  report.seconds = result.seconds;
  const Evaluation evaluation = evaluate(config, setup, params);
  report.metrics = evaluation.metrics;

  write_report(out, report.history);
  write_evaluation(out, evaluation);
  write_checkpoint(out / "checkpoint.params",
                   {config, objective.weights(), result.final_loss.total, result.termination, params});
  if (log) {
    *log << "status " << to_string(result.termination) << " loss " << format_double(result.final_loss.total);
    for (const Metric& m : report.metrics) {
      *log << ' ' << m.quantity << " rmae " << format_double(m.rmae) << " rrmse " << format_double(m.rrmse);
    }
    *log << '\n';
  }
  return report;
}

Evaluation cmd_eval(const fs::path& checkpoint, const std::optional<RunConfig>& config, const fs::path& out) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const RunConfig cfg = resolve_config(ck, config);
  const ProblemSetup setup = prepare_problem(cfg);
  const Evaluation e = evaluate(cfg, setup, ck.params);
  fs::create_directories(out);
  write_evaluation(out, e);
  return e;
}

LandscapeResult cmd_landscape(const fs::path& checkpoint, const std::optional<RunConfig>& config,
                              const fs::path& out, std::ostream* log) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const RunConfig cfg = resolve_config(ck, config);
  const ProblemSetup setup = prepare_problem(cfg);
  const PinnObjective objective = make_objective(cfg, setup, ck.weights);
  const Eigen::VectorXd theta = ck.params.flatten();

  LandscapeResult result;
  result.checkpoint_loss = value_at(objective, theta);
  LandscapeOptions options;
  options.n = cfg.landscape.n;
  if (cfg.landscape.half_range > 0.0) options.half_range = cfg.landscape.half_range;
  options.eigen = {.count = 2, .iterations = cfg.landscape.iterations, .tolerance = cfg.landscape.tolerance,
                   .seed = cfg.seed};
  result.grid = hessian_landscape(objective, theta, options);
  result.lipschitz = lipschitz_estimate(result.grid);

  fs::create_directories(out);
  std::ofstream csv = open_output(out / "landscape.csv");
  write_landscape_csv(csv, result.grid);
  if (log) {
    *log << "lambda1 " << format_double(result.grid.lambda1) << " lambda2 " << format_double(result.grid.lambda2)
         << " center " << format_double(result.grid.center()) << " lipschitz " << format_double(result.lipschitz)
         << '\n';
  }
  return result;
}

std::string sweep_key(const std::string& axis) {
  if (axis == "activation") return "model.activation";
  if (axis == "k") return "model.k";
  if (axis == "dt") return "model.dt";
  if (axis.find('.') == std::string::npos) throw ConfigError("unknown sweep axis '" + axis + "'");
  return axis;
}

std::vector<SweepCell> cmd_sweep(const RunConfig& config, const std::vector<SweepAxis>& axes, const fs::path& out,
                                 std::ostream* log) {
  if (axes.empty()) throw ConfigError("sweep needs at least one axis");
  std::vector<std::string> keys;
  std::size_t total = 1;
  for (const SweepAxis& a : axes) {
    if (a.values.empty()) throw ConfigError("sweep axis '" + a.name + "' has no values");
    keys.push_back(sweep_key(a.name));
    total *= a.values.size();
  }
  fs::create_directories(out);
  std::vector<SweepCell> cells;
  for (std::size_t i = 0; i < total; ++i) {
    SweepCell cell;
    cell.values.resize(axes.size());
    for (std::size_t a = axes.size(), rest = i; a-- > 0; rest /= axes[a].values.size()) {
      cell.values[a] = axes[a].values[rest % axes[a].values.size()];
    }
    try {
      RunConfig c = config;
      for (std::size_t a = 0; a < axes.size(); ++a) c.set(keys[a], cell.values[a]);
      c.validate();
      const fs::path dir = out / ("cell-" + std::to_string(i));
      if (log) {
        *log << "cell " << i << ':';
        for (std::size_t a = 0; a < axes.size(); ++a) *log << ' ' << keys[a] << " = " << cell.values[a];
        *log << " -> " << dir.string() << '\n';
      }
      const RunReport r = cmd_train(c, dir, log);
      cell.status = to_string(r.termination);
      cell.loss = r.termination == Termination::diverged ? r.history.back().loss.total : r.final_loss.total;
      cell.rmae = r.metrics.front().rmae;
      cell.rrmse = r.metrics.front().rrmse;
    } catch (const std::exception& e) {
      cell.status = "error";
      cell.loss = cell.rmae = cell.rrmse = std::numeric_limits<double>::quiet_NaN();
      cell.message = e.what();
      if (log) *log << "cell failed: " << e.what() << '\n';
    }
    cells.push_back(cell);
  }
  std::ofstream summary = open_output(out / "summary.csv");
  for (const std::string& k : keys) summary << k << ',';
  summary << "status,loss,rmae,rrmse\n";
  for (const SweepCell& c : cells) {
    for (const std::string& v : c.values) summary << v << ',';
    summary << c.status << ',' << format_double(c.loss) << ',' << format_double(c.rmae) << ','
            << format_double(c.rrmse) << '\n';
  }
  return cells;
}

std::vector<SweepCell> cmd_sweep(const RunConfig& config, const std::string& axis,
                                 const std::vector<std::string>& values, const fs::path& out, std::ostream* log) {
  return cmd_sweep(config, std::vector<SweepAxis>{{axis, values}}, out, log);
}

}  // namespace pinnsformer
