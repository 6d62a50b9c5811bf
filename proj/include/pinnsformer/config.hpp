#pragma once

// Run configuration: flat `key = value` sections, read and written with exact
// round-trip of every number.
//
//   [run]        seed, output
//   [problem]    name, beta, rho, lambda1, lambda2, wave_raw, dataset
//   [model]      architecture, k, dt, embed_dim, heads, encoders, decoders,
//                feedforward_width, feedforward_layers, output_widths,
//                hidden_width, hidden_layers, activation
//   [train]      optimizer, iterations, learning_rate, history, max_evals,
//                ntk, ntk_refresh, ntk_cap
//   [weights]    residual, boundary, initial, data
//   [mesh]       mode, n_x, n_t, n_bc, n_ic, count
//   [eval]       n_x, n_t
//   [landscape]  n, half_range (0 = automatic), iterations, tolerance

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "pinnsformer/analysis.hpp"
#include "pinnsformer/objective.hpp"

namespace pinnsformer {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalMesh {
  int n_x = 101;
  int n_t = 101;
};

struct LandscapeConfig {
  int n = 41;
  double half_range = 0.0;  // 0 selects 0.5 |theta| / |v|
  int iterations = 100;
  double tolerance = 1e-4;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output = "runs/default";
  ProblemKind problem = ProblemKind::reaction;
  Coefficients coefficients;
  std::string dataset;  // Navier-Stokes observations
  ModelSpec model;
  TrainOptions train;
  LossWeights weights;
  MeshSpec mesh;
  EvalMesh eval;
  LandscapeConfig landscape;

  // Sets one `section.key`.  Throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  bool operator==(const RunConfig& other) const;
};

// Defaults for a problem and architecture: reference coefficients, the
// architecture's parameter budget and the full-scale mesh.
RunConfig default_config(ProblemKind problem, Architecture arch = Architecture::pinnsformer);

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& out, const RunConfig& config);
std::string to_ini(const RunConfig& config);

// Problem with its coefficients; Navier-Stokes bounds follow the dataset when given.
PdeProblem make_problem(const RunConfig& config, const NsDataset* data = nullptr);

}  // namespace pinnsformer
