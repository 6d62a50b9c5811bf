#include "pinnsformer/model.hpp"

namespace pinnsformer {

Architecture parse_architecture(std::string_view name) {
  if (name == "pinnsformer") return Architecture::pinnsformer;
  if (name == "pinn-mlp") return Architecture::pinn_mlp;
  if (name == "fls") return Architecture::fls;
  if (name == "qres") return Architecture::qres;
  throw UnknownArchitecture("unknown architecture '" + std::string(name) + "'");
}

const char* to_string(Architecture arch) {
  switch (arch) {
    case Architecture::pinnsformer: return "pinnsformer";
    case Architecture::pinn_mlp: return "pinn-mlp";
    case Architecture::fls: return "fls";
    case Architecture::qres: return "qres";
  }
  return "unknown";
}

ModelSpec ModelSpec::defaults(Architecture arch) {
  ModelSpec spec;
  spec.architecture = arch;
  switch (arch) {
    case Architecture::pinnsformer:
      spec.activation = ActivationKind::wavelet;
      break;
    case Architecture::pinn_mlp:
    case Architecture::fls:
      spec.hidden_width = 512;
      spec.hidden_layers = 3;
      spec.activation = ActivationKind::tanh;
      break;
    case Architecture::qres:
      spec.hidden_width = 256;
      spec.hidden_layers = 4;
      spec.activation = ActivationKind::sigmoid;
      break;
  }
  return spec;
}

void ModelSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) throw ModelError("input and output dimensions must be positive");
  if (architecture == Architecture::pinnsformer) {
    if (k < 1) throw InvalidK("pseudo sequence length k must be >= 1");
    if (!(dt > 0.0)) throw InvalidStep("pseudo sequence step dt must be > 0");
    if (heads < 1 || embed_dim % heads != 0) throw ModelError("embed_dim must be divisible by heads");
    if (encoders < 0 || decoders < 0) throw ModelError("layer counts must be nonnegative");
    if (feedforward_width < 1 || feedforward_layers < 1) throw ModelError("feedforward needs width and depth");
    for (int w : output_widths) {
      if (w < 1) throw ModelError("output widths must be positive");
    }
  } else {
    if (hidden_width < 1 || hidden_layers < 1) throw ModelError("baseline needs width and depth");
  }
}

// --- pseudo sequences -------------------------------------------------------------

DiffTensor PseudoSequenceBatch::stacked() const { return concat(coordinates, -1); }

PseudoSequenceBatch generate_pseudo_sequence(const DiffTensor& points, int k, double dt, Graph* graph) {
  if (k < 1) throw InvalidK("pseudo sequence length k must be >= 1, got " + std::to_string(k));
  if (!(dt > 0.0)) throw InvalidStep("pseudo sequence step must be > 0");
  if (points.rank() != 2 || points.dim(1) < 1) {
    throw IncompatibleShapes("points must be [B, d], got " + to_string(points.shape()));
  }
  const Index batch = points.dim(0);
  const Index dims = points.dim(1);
  const Values& p = points.values();
  PseudoSequenceBatch seq;
  for (Index c = 0; c < dims; ++c) {
    Values column(batch * k);
    const bool is_time = c == dims - 1;
    for (Index b = 0; b < batch; ++b) {
      const double base = p[b * dims + c];
      column[b * k] = base;
      for (int j = 1; j < k; ++j) column[b * k + j] = is_time ? base + j * dt : base;
    }
    DiffTensor tensor({batch, static_cast<Index>(k), 1}, std::move(column));
    seq.coordinates.push_back(graph ? graph->variable(tensor) : tensor);
  }
  return seq;
}

std::vector<DiffTensor> split_columns(const DiffTensor& points) {
  if (points.rank() != 2) throw IncompatibleShapes("points must be [B, d], got " + to_string(points.shape()));
  std::vector<DiffTensor> columns;
  for (Index c = 0; c < points.dim(1); ++c) columns.push_back(slice(points, 1, c, 1));
  return columns;
}

// --- PINNsFormer -------------------------------------------------------------------------

PinnsFormer::PinnsFormer(const ModelSpec& spec, ParamSource& source) : spec_(spec) {
  spec_.validate();
  if (spec_.architecture != Architecture::pinnsformer) throw UnknownArchitecture("PinnsFormer needs architecture pinnsformer");
  mixer_ = LinearLayer::create(source, "mixer", spec_.input_dim, spec_.embed_dim);
  const BlockSpec block{spec_.embed_dim, spec_.heads, spec_.feedforward_width, spec_.feedforward_layers,
                        spec_.activation};
  for (int i = 0; i < spec_.encoders; ++i) {
    encoders_.push_back(make_encoder_layer(source, "encoder." + std::to_string(i), block));
  }
  for (int i = 0; i < spec_.decoders; ++i) {
    decoders_.push_back(make_decoder_layer(source, "decoder." + std::to_string(i), block));
  }
  Index in = spec_.embed_dim;
  for (std::size_t i = 0; i < spec_.output_widths.size(); ++i) {
    const Index width = spec_.output_widths[i];
    head_.push_back(LinearLayer::create(source, "head.linear" + std::to_string(i), in, width));
    head_activations_.push_back(Activation::create(source, "head.act" + std::to_string(i), spec_.activation));
    in = width;
  }
  head_.push_back(
      LinearLayer::create(source, "head.linear" + std::to_string(spec_.output_widths.size()), in, spec_.output_dim));
}

DiffTensor PinnsFormer::forward(const std::vector<DiffTensor>& coordinates) const {
  if (static_cast<int>(coordinates.size()) != spec_.input_dim) {
    throw IncompatibleShapes("PINNsFormer expects " + std::to_string(spec_.input_dim) + " coordinate tensors");
  }
  PseudoSequenceBatch seq{coordinates};
  const DiffTensor embedded = mixer_forward(mixer_, seq);
  DiffTensor encoded = embedded;
  for (const EncoderLayer& layer : encoders_) encoded = encoder_forward(layer, encoded);
  // The decoder starts from the same embedding the encoder saw.
  DiffTensor decoded = embedded;
  for (const DecoderLayer& layer : decoders_) decoded = decoder_forward(layer, decoded, encoded);
  DiffTensor h = decoded;
  for (std::size_t i = 0; i < head_activations_.size(); ++i) h = head_activations_[i](linear_forward(head_[i], h));
  return linear_forward(head_.back(), h);
}

DiffTensor mixer_forward(const LinearLayer& mixer, const PseudoSequenceBatch& seq) {
  const DiffTensor stacked = seq.stacked();
  if (stacked.rank() != 3 || stacked.dim(-1) != mixer.in_features()) {
    throw IncompatibleShapes("mixer expects [B, k, " + std::to_string(mixer.in_features()) + "], got " +
                             to_string(stacked.shape()));
  }
  return linear_forward(mixer, stacked);
}

DiffTensor pinnsformer_forward(const PinnsFormer& model, const DiffTensor& points) {
  const PseudoSequenceBatch seq = generate_pseudo_sequence(points, model.spec().k, model.spec().dt);
  return model.forward(seq.coordinates);
}

DiffTensor extract_solution(const DiffTensor& sequence_output) {
  if (sequence_output.rank() != 3 || sequence_output.dim(1) < 1) {
    throw IncompatibleShapes("sequence output must be [B, k, out], got " + to_string(sequence_output.shape()));
  }
  return reshape(slice(sequence_output, 1, 0, 1), {sequence_output.dim(0), sequence_output.dim(2)});
}

// --- baselines --------------------------------------------------------------------------

MlpNetwork::MlpNetwork(const ModelSpec& spec, ParamSource& source) : spec_(spec) {
  spec_.validate();
  Index in = spec_.input_dim;
  for (int i = 0; i < spec_.hidden_layers; ++i) {
    layers_.push_back(LinearLayer::create(source, "mlp.linear" + std::to_string(i), in, spec_.hidden_width));
    ActivationKind kind = spec_.activation;
    if (spec_.architecture == Architecture::fls && i == 0) kind = ActivationKind::sin;
    activations_.push_back(Activation::create(source, "mlp.act" + std::to_string(i), kind));
    in = spec_.hidden_width;
  }
  layers_.push_back(
      LinearLayer::create(source, "mlp.linear" + std::to_string(spec_.hidden_layers), in, spec_.output_dim));
}

DiffTensor MlpNetwork::forward(const std::vector<DiffTensor>& coordinates) const {
  DiffTensor h = concat(coordinates, -1);
  for (std::size_t i = 0; i < activations_.size(); ++i) h = activations_[i](linear_forward(layers_[i], h));
  return linear_forward(layers_.back(), h);
}

QResNetwork::QResNetwork(const ModelSpec& spec, ParamSource& source) : spec_(spec) {
  spec_.validate();
  Index in = spec_.input_dim;
  for (int i = 0; i < spec_.hidden_layers; ++i) {
    const std::string prefix = "qres.block" + std::to_string(i);
    blocks_.push_back({LinearLayer::create(source, prefix + ".first", in, spec_.hidden_width),
                       LinearLayer::create(source, prefix + ".second", in, spec_.hidden_width)});
    in = spec_.hidden_width;
  }
  activation_ = Activation::create(source, "qres.act", spec_.activation);
  out_ = LinearLayer::create(source, "qres.out", in, spec_.output_dim);
}

DiffTensor QResNetwork::forward(const std::vector<DiffTensor>& coordinates) const {
  DiffTensor h = concat(coordinates, -1);
  for (const Block& block : blocks_) {
    const DiffTensor first = linear_forward(block.first, h);
    h = activation_(first * linear_forward(block.second, h) + first);
  }
  return linear_forward(out_, h);
}

std::unique_ptr<Network> build_network(const ModelSpec& spec, ParamSource& source) {
  switch (spec.architecture) {
    case Architecture::pinnsformer: return std::make_unique<PinnsFormer>(spec, source);
    case Architecture::pinn_mlp:
    case Architecture::fls: return std::make_unique<MlpNetwork>(spec, source);
    case Architecture::qres: return std::make_unique<QResNetwork>(spec, source);
  }
  throw UnknownArchitecture("unhandled architecture");
}

ParamStore init_parameters(const ModelSpec& spec, std::uint64_t seed) {
  ParamStore store;
  ParamInitializer initializer(store, seed);
  build_network(spec, initializer);
  return store;
}

DiffTensor baseline_forward(const Network& model, const DiffTensor& points) {
  if (model.sequential()) throw UnknownArchitecture("baseline_forward needs a pointwise architecture");
  return model.forward(split_columns(points));
}

}  // namespace pinnsformer
