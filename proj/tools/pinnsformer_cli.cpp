#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>

#include "pinnsformer/runner.hpp"

using namespace pinnsformer;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "run configuration (INI)")->check(CLI::ExistingFile);
  if (config_required) opt->required();
  cmd->add_option("--out", c.out, "output directory (default: run.output)");
  cmd->add_option("--seed", c.seed, "seed override");
  cmd->add_option("--set", c.overrides, "section.key=value override, repeatable");
}

std::optional<RunConfig> resolve(const Common& c) {
  if (c.config.empty() && c.overrides.empty() && !c.seed) return std::nullopt;
  if (c.config.empty()) throw ConfigError("--set and --seed need --config");
  RunConfig config = load_config(c.config);
  for (const std::string& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    config.set(o.substr(0, eq), o.substr(eq + 1));
  }
  if (c.seed) config.seed = *c.seed;
  config.validate();
  return config;
}

std::string output_dir(const Common& c, const std::optional<RunConfig>& config, const std::string& fallback) {
  if (!c.out.empty()) return c.out;
  return config ? config->output : fallback;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PINNsFormer and baseline PINN experiments"};
  app.require_subcommand(1);

  Common train_opts;
  auto* train_cmd = app.add_subcommand("train", "train a model and write report, metrics and checkpoint");
  add_common(train_cmd, train_opts, true);

  Common eval_opts;
  std::string eval_checkpoint;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test mesh");
  add_common(eval_cmd, eval_opts, false);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint.params")->required()->check(CLI::ExistingFile);

  Common land_opts;
  std::string land_checkpoint;
  auto* land_cmd = app.add_subcommand("landscape", "loss landscape along the top Hessian eigenvectors");
  add_common(land_cmd, land_opts, false);
  land_cmd->add_option("--checkpoint", land_checkpoint, "checkpoint.params")->required()->check(CLI::ExistingFile);

  Common sweep_opts;
  std::vector<std::string> axis_specs;
  auto* sweep_cmd = app.add_subcommand("sweep", "train once per point of a grid of configuration values");
  add_common(sweep_cmd, sweep_opts, true);
  sweep_cmd->add_option("--axis", axis_specs, "axis=v1,v2,... with axis activation, k, dt or section.key; repeatable")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const RunConfig config = *resolve(train_opts);
      const RunReport r = cmd_train(config, output_dir(train_opts, config, config.output), &std::cout);
      std::cout << "wall clock " << r.seconds << " s\n";
    } else if (*eval_cmd) {
      const auto config = resolve(eval_opts);
      const std::string out = output_dir(eval_opts, config, std::filesystem::path(eval_checkpoint).parent_path());
      const Evaluation e = cmd_eval(eval_checkpoint, config, out);
      for (const Metric& m : e.metrics) {
        std::cout << m.quantity << " rmae " << format_double(m.rmae) << " rrmse " << format_double(m.rrmse) << '\n';
      }
    } else if (*land_cmd) {
      const auto config = resolve(land_opts);
      const std::string out = output_dir(land_opts, config, std::filesystem::path(land_checkpoint).parent_path());
      cmd_landscape(land_checkpoint, config, out, &std::cout);
    } else if (*sweep_cmd) {
      const RunConfig config = *resolve(sweep_opts);
      std::vector<SweepAxis> axes;
      for (const std::string& spec : axis_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw ConfigError("--axis expects axis=v1,v2,...");
        axes.push_back({spec.substr(0, eq), split(spec.substr(eq + 1), ',')});
      }
      const auto cells = cmd_sweep(config, axes, output_dir(sweep_opts, config, config.output), &std::cout);
      for (const SweepCell& c : cells) {
        for (const std::string& v : c.values) std::cout << v << ' ';
        std::cout << c.status << " loss " << format_double(c.loss) << " rrmse "
                  << format_double(c.rrmse) << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
