#include "pinnsformer/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace pinnsformer {

namespace {

double to_double(const std::string& key, const std::string& text) {
  double value = 0.0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), value);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return value;
}

long long to_integer(const std::string& key, const std::string& text) {
  long long value = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), value);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
  return value;
}

int to_int(const std::string& key, const std::string& text) { return static_cast<int>(to_integer(key, text)); }

bool to_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::vector<int> to_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(' ');
    const auto last = item.find_last_not_of(' ');
    if (first == std::string::npos) throw ConfigError(key + ": empty list item");
    out.push_back(to_int(key, item.substr(first, last - first + 1)));
  }
  return out;
}

std::string from_int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define DOUBLE_KEY(NAME, FIELD)                                                             \
  Key {                                                                                     \
    NAME, [](const RunConfig& c) { return format_double(c.FIELD); },                        \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_double(k, v); } \
  }
#define INT_KEY(NAME, FIELD)                                                                 \
  Key {                                                                                      \
    NAME, [](const RunConfig& c) { return std::to_string(c.FIELD); },                        \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_int(k, v); } \
  }
#define BOOL_KEY(NAME, FIELD)                                                                 \
  Key {                                                                                       \
    NAME, [](const RunConfig& c) { return from_bool(c.FIELD); },                              \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_bool(k, v); } \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"run.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            const long long s = to_integer(k, v);
            if (s < 0) throw ConfigError(k + ": seed must be nonnegative");
            c.seed = static_cast<std::uint64_t>(s);
          }},
      Key{"run.output", [](const RunConfig& c) { return c.output; },
          [](RunConfig& c, const std::string&, const std::string& v) { c.output = v; }},
      Key{"problem.name", [](const RunConfig& c) { return std::string(to_string(c.problem)); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            try {
              c.problem = parse_problem(v);
            } catch (const std::exception& e) {
              throw ConfigError(k + ": " + e.what());
            }
            const PdeProblem p(c.problem, c.coefficients);
            c.model.input_dim = p.input_dim();
            c.model.output_dim = p.output_dim();
          }},
      DOUBLE_KEY("problem.beta", coefficients.beta),
      DOUBLE_KEY("problem.rho", coefficients.rho),
      DOUBLE_KEY("problem.lambda1", coefficients.lambda1),
      DOUBLE_KEY("problem.lambda2", coefficients.lambda2),
      BOOL_KEY("problem.wave_raw", coefficients.raw_wave_coefficient),
      Key{"problem.dataset", [](const RunConfig& c) { return c.dataset; },
          [](RunConfig& c, const std::string&, const std::string& v) { c.dataset = v; }},
      Key{"model.architecture", [](const RunConfig& c) { return std::string(to_string(c.model.architecture)); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            try {
              c.model.architecture = parse_architecture(v);
            } catch (const std::exception& e) {
              throw ConfigError(k + ": " + e.what());
            }
          }},
      INT_KEY("model.k", model.k),
      DOUBLE_KEY("model.dt", model.dt),
      INT_KEY("model.embed_dim", model.embed_dim),
      INT_KEY("model.heads", model.heads),
      INT_KEY("model.encoders", model.encoders),
      INT_KEY("model.decoders", model.decoders),
      INT_KEY("model.feedforward_width", model.feedforward_width),
      INT_KEY("model.feedforward_layers", model.feedforward_layers),
      Key{"model.output_widths", [](const RunConfig& c) { return from_int_list(c.model.output_widths); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.model.output_widths = to_int_list(k, v); }},
      INT_KEY("model.hidden_width", model.hidden_width),
      INT_KEY("model.hidden_layers", model.hidden_layers),
      Key{"model.activation", [](const RunConfig& c) { return std::string(to_string(c.model.activation)); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            try {
              c.model.activation = parse_activation(v);
            } catch (const std::exception& e) {
              throw ConfigError(k + ": " + e.what());
            }
          }},
      Key{"train.optimizer", [](const RunConfig& c) { return to_string(c.train.optimizer); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            try {
              c.train.optimizer = parse_optimizer(v);
            } catch (const std::exception& e) {
              throw ConfigError(k + ": " + e.what());
            }
          }},
      INT_KEY("train.iterations", train.iterations),
      DOUBLE_KEY("train.learning_rate", train.adam.learning_rate),
      INT_KEY("train.history", train.lbfgs.history),
      INT_KEY("train.max_evals", train.lbfgs.wolfe.max_evals),
      BOOL_KEY("train.ntk", train.ntk),
      INT_KEY("train.ntk_refresh", train.ntk_refresh),
      INT_KEY("train.ntk_cap", train.ntk_cap),
      DOUBLE_KEY("weights.residual", weights.residual),
      DOUBLE_KEY("weights.boundary", weights.boundary),
      DOUBLE_KEY("weights.initial", weights.initial),
      DOUBLE_KEY("weights.data", weights.data),
      Key{"mesh.mode",
          [](const RunConfig& c) { return std::string(c.mesh.mode == MeshSpec::Mode::grid ? "grid" : "random"); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            if (v == "grid") {
              c.mesh.mode = MeshSpec::Mode::grid;
            } else if (v == "random") {
              c.mesh.mode = MeshSpec::Mode::random;
            } else {
              throw ConfigError(k + ": expected grid or random, got '" + v + "'");
            }
          }},
      INT_KEY("mesh.n_x", mesh.n_x),
      INT_KEY("mesh.n_t", mesh.n_t),
      INT_KEY("mesh.n_bc", mesh.n_bc),
      INT_KEY("mesh.n_ic", mesh.n_ic),
      INT_KEY("mesh.count", mesh.count),
      INT_KEY("eval.n_x", eval.n_x),
      INT_KEY("eval.n_t", eval.n_t),
      INT_KEY("landscape.n", landscape.n),
      DOUBLE_KEY("landscape.half_range", landscape.half_range),
      INT_KEY("landscape.iterations", landscape.iterations),
      DOUBLE_KEY("landscape.tolerance", landscape.tolerance),
  };
  return table;
}

#undef DOUBLE_KEY
#undef INT_KEY
#undef BOOL_KEY

const Key& find_key(const std::string& name) {
  for (const Key& k : keys()) {
    if (name == k.name) return k;
  }
  throw ConfigError("unknown configuration key '" + name + "'");
}

Coefficients default_coefficients(ProblemKind kind) {
  switch (kind) {
    case ProblemKind::convection: return convection_problem().coefficients();
    case ProblemKind::reaction: return reaction_problem().coefficients();
    case ProblemKind::wave: return wave_problem().coefficients();
    case ProblemKind::navier_stokes: return navier_stokes_problem().coefficients();
  }
  return {};
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { find_key(key).set(*this, key, value); }

void RunConfig::validate() const {
  try {
    model.validate();
    weights.validate();
    train.lbfgs.wolfe.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  const PdeProblem p = make_problem(*this);
  if (model.input_dim != p.input_dim() || model.output_dim != p.output_dim()) {
    throw ConfigError("model input/output sizes do not match problem " + p.name());
  }
  if (train.iterations < 0) throw ConfigError("train.iterations must be >= 0");
  if (train.lbfgs.history < 1) throw ConfigError("train.history must be >= 1");
  if (train.ntk_refresh < 1 || train.ntk_cap < 1) throw ConfigError("NTK refresh and cap must be >= 1");
  if (!(train.adam.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (problem == ProblemKind::navier_stokes) {
    if (mesh.count < 1) throw ConfigError("mesh.count must be >= 1");
  } else if (mesh.mode == MeshSpec::Mode::grid ? (mesh.n_x < 2 || mesh.n_t < 2) : mesh.count < 1) {
    throw ConfigError("mesh needs at least two points per axis or one random point");
  }
  if (mesh.n_bc < 1 || mesh.n_ic < 1) throw ConfigError("mesh.n_bc and mesh.n_ic must be >= 1");
  if (eval.n_x < 2 || eval.n_t < 2) throw ConfigError("eval mesh needs at least two points per axis");
  if (landscape.n < 1 || landscape.n % 2 == 0) throw ConfigError("landscape.n must be odd");
  if (landscape.half_range < 0.0) throw ConfigError("landscape.half_range must be >= 0");
  if (landscape.iterations < 1 || !(landscape.tolerance > 0.0)) {
    throw ConfigError("landscape iterations and tolerance must be positive");
  }
}

bool RunConfig::operator==(const RunConfig& other) const {
  for (const Key& k : keys()) {
    if (k.get(*this) != k.get(other)) return false;
  }
  return true;
}

RunConfig default_config(ProblemKind problem, Architecture arch) {
  RunConfig c;
  c.problem = problem;
  c.coefficients = default_coefficients(problem);
  c.model = ModelSpec::defaults(arch);
  const PdeProblem p = make_problem(c);
  c.model.input_dim = p.input_dim();
  c.model.output_dim = p.output_dim();
  return c;
}

RunConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  }
  auto lookup = [&](const char* path) -> std::optional<std::string> {
    if (auto v = tree.get_optional<std::string>(path)) return *v;
    return std::nullopt;
  };
  ProblemKind problem = ProblemKind::reaction;
  Architecture arch = Architecture::pinnsformer;
  RunConfig scratch;
  if (auto v = lookup("problem.name")) {
    scratch.set("problem.name", *v);
    problem = scratch.problem;
  }
  if (auto v = lookup("model.architecture")) {
    scratch.set("model.architecture", *v);
    arch = scratch.model.architecture;
  }
  RunConfig config = default_config(problem, arch);
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty()) {
      throw ConfigError("key '" + section + "' is outside any section");
    }
    for (const auto& [key, value] : entries) config.set(section + "." + key, value.data());
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration " + path.string());
  return parse_config(in);
}

void write_config(std::ostream& out, const RunConfig& config) {
  std::string section;
  for (const Key& k : keys()) {
    const std::string name = k.name;
    const auto dot = name.find('.');
    const std::string s = name.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    out << name.substr(dot + 1) << " = " << k.get(config) << '\n';
  }
}

std::string to_ini(const RunConfig& config) {
  std::ostringstream out;
  write_config(out, config);
  return out.str();
}

PdeProblem make_problem(const RunConfig& config, const NsDataset* data) {
  PdeProblem p(config.problem, config.coefficients);
  if (data != nullptr && config.problem == ProblemKind::navier_stokes) {
    const auto [x_lo, x_hi] = data->range(data->x);
    const auto [y_lo, y_hi] = data->range(data->y);
    const auto [t_lo, t_hi] = data->range(data->t);
    p.set_bounds({{x_lo, x_hi}, {y_lo, y_hi}, {t_lo, t_hi}});
  }
  return p;
}

}  // namespace pinnsformer
