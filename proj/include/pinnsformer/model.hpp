#pragma once

// PINNsFormer and the pointwise baselines (MLP PINN, first-layer-sine, QRes).

#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pinnsformer/layers.hpp"
#include "pinnsformer/param_store.hpp"

namespace pinnsformer {

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidK : public ModelError {
 public:
  using ModelError::ModelError;
};

class InvalidStep : public ModelError {
 public:
  using ModelError::ModelError;
};

class UnknownArchitecture : public ModelError {
 public:
  using ModelError::ModelError;
};

enum class Architecture { pinnsformer, pinn_mlp, fls, qres };

Architecture parse_architecture(std::string_view name);
const char* to_string(Architecture arch);

struct ModelSpec {
  Architecture architecture = Architecture::pinnsformer;
  int input_dim = 2;   // spatial coordinates followed by time
  int output_dim = 1;

  // PINNsFormer
  int k = 5;
  double dt = 1e-3;
  int embed_dim = 32;
  int heads = 2;
  int encoders = 1;
  int decoders = 1;
  int feedforward_width = 256;
  int feedforward_layers = 2;
  std::vector<int> output_widths{512, 512};

  // Baselines
  int hidden_width = 512;
  int hidden_layers = 3;

  ActivationKind activation = ActivationKind::wavelet;

  // Architecture defaults reproducing the reference parameter budgets.
  static ModelSpec defaults(Architecture arch);
  void validate() const;
  bool sequential() const { return architecture == Architecture::pinnsformer; }
  int sequence_length() const { return sequential() ? k : 1; }
};

// --- pseudo sequences -------------------------------------------------------------

// Coordinates of a batch of pseudo sequences.  Column c of step j is
// points[:, c] for spatial coordinates and t + j * dt for time.
struct PseudoSequenceBatch {
  std::vector<DiffTensor> coordinates;  // one [B, k, 1] tensor per input coordinate

  Index batch() const { return coordinates.front().dim(0); }
  Index steps() const { return coordinates.front().dim(1); }
  DiffTensor stacked() const;  // [B, k, d]
};

// With a graph, every coordinate tensor is a fresh leaf of it so derivatives
// with respect to each pseudo step are available.
PseudoSequenceBatch generate_pseudo_sequence(const DiffTensor& points, int k, double dt, Graph* graph = nullptr);

// --- networks ------------------------------------------------------------------------

class Network {
 public:
  virtual ~Network() = default;
  // One tensor per input coordinate: [B, 1] for pointwise networks, [B, k, 1]
  // for sequential ones.  Returns [B, out] or [B, k, out].
  virtual DiffTensor forward(const std::vector<DiffTensor>& coordinates) const = 0;
  virtual const ModelSpec& spec() const = 0;
  bool sequential() const { return spec().sequential(); }
};

class PinnsFormer final : public Network {
 public:
  PinnsFormer(const ModelSpec& spec, ParamSource& source);
  DiffTensor forward(const std::vector<DiffTensor>& coordinates) const override;
  const ModelSpec& spec() const override { return spec_; }

  const LinearLayer& mixer() const { return mixer_; }
  const std::vector<EncoderLayer>& encoders() const { return encoders_; }
  const std::vector<DecoderLayer>& decoders() const { return decoders_; }

 private:
  ModelSpec spec_;
  LinearLayer mixer_;
  std::vector<EncoderLayer> encoders_;
  std::vector<DecoderLayer> decoders_;
  std::vector<LinearLayer> head_;
  std::vector<Activation> head_activations_;
};

class MlpNetwork final : public Network {
 public:
  MlpNetwork(const ModelSpec& spec, ParamSource& source);
  DiffTensor forward(const std::vector<DiffTensor>& coordinates) const override;
  const ModelSpec& spec() const override { return spec_; }

 private:
  ModelSpec spec_;
  std::vector<LinearLayer> layers_;
  std::vector<Activation> activations_;
};

// Hidden blocks compute act(W1 h * W2 h + W1 h).
class QResNetwork final : public Network {
 public:
  QResNetwork(const ModelSpec& spec, ParamSource& source);
  DiffTensor forward(const std::vector<DiffTensor>& coordinates) const override;
  const ModelSpec& spec() const override { return spec_; }

 private:
  struct Block {
    LinearLayer first;
    LinearLayer second;
  };
  ModelSpec spec_;
  std::vector<Block> blocks_;
  Activation activation_;
  LinearLayer out_;
};

std::unique_ptr<Network> build_network(const ModelSpec& spec, ParamSource& source);
ParamStore init_parameters(const ModelSpec& spec, std::uint64_t seed);

// Shared spatio-temporal projection applied to every pseudo step.
DiffTensor mixer_forward(const LinearLayer& mixer, const PseudoSequenceBatch& seq);

// Full pipeline on raw points [B, d]; returns [B, k, out].
DiffTensor pinnsformer_forward(const PinnsFormer& model, const DiffTensor& points);

// Step 0 of a sequence output: [B, k, out] -> [B, out].
DiffTensor extract_solution(const DiffTensor& sequence_output);

// Pointwise baseline on raw points [B, d]; returns [B, out].
DiffTensor baseline_forward(const Network& model, const DiffTensor& points);

// Splits [B, d] points into d column tensors of shape [B, 1].
std::vector<DiffTensor> split_columns(const DiffTensor& points);

}  // namespace pinnsformer
