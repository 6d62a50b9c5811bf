#include "pinnsformer/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace pinnsformer {

ActivationKind parse_activation(std::string_view name) {
  if (name == "wavelet") return ActivationKind::wavelet;
  if (name == "tanh") return ActivationKind::tanh;
  if (name == "sin") return ActivationKind::sin;
  if (name == "relu") return ActivationKind::relu;
  if (name == "sigmoid") return ActivationKind::sigmoid;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

const char* to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::wavelet: return "wavelet";
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::sin: return "sin";
    case ActivationKind::relu: return "relu";
    case ActivationKind::sigmoid: return "sigmoid";
  }
  return "unknown";
}

LinearLayer LinearLayer::create(ParamSource& source, const std::string& prefix, Index in, Index out) {
  LinearLayer layer;
  layer.weight = source.param(prefix + ".weight", {out, in}, Init::xavier);
  layer.bias = source.param(prefix + ".bias", {out}, Init::zeros);
  return layer;
}

DiffTensor linear_forward(const LinearLayer& layer, const DiffTensor& x) { return linear(x, layer.weight, layer.bias); }

WaveletActivation WaveletActivation::create(ParamSource& source, const std::string& prefix) {
  return {source.param(prefix + ".omega1", {1}, Init::ones), source.param(prefix + ".omega2", {1}, Init::ones)};
}

DiffTensor wavelet(const WaveletActivation& act, const DiffTensor& x) { return wavelet(x, act.omega1, act.omega2); }

Activation Activation::create(ParamSource& source, const std::string& prefix, ActivationKind kind) {
  Activation act;
  act.kind = kind;
  if (kind == ActivationKind::wavelet) act.wavelet = WaveletActivation::create(source, prefix);
  return act;
}

DiffTensor Activation::operator()(const DiffTensor& x) const {
  switch (kind) {
    case ActivationKind::wavelet: return pinnsformer::wavelet(wavelet, x);
    case ActivationKind::tanh: return tanh(x);
    case ActivationKind::sin: return sin(x);
    case ActivationKind::relu: return relu(x);
    case ActivationKind::sigmoid: return sigmoid(x);
  }
  throw std::logic_error("unhandled activation");
}

MultiHeadAttention MultiHeadAttention::create(ParamSource& source, const std::string& prefix, Index embed,
                                              Index heads) {
  if (heads < 1 || embed % heads != 0) {
    throw std::invalid_argument("embedding size " + std::to_string(embed) + " is not divisible by " +
                                std::to_string(heads) + " heads");
  }
  MultiHeadAttention mha;
  mha.heads = heads;
  mha.query = LinearLayer::create(source, prefix + ".query", embed, embed);
  mha.key = LinearLayer::create(source, prefix + ".key", embed, embed);
  mha.value = LinearLayer::create(source, prefix + ".value", embed, embed);
  mha.output = LinearLayer::create(source, prefix + ".output", embed, embed);
  return mha;
}

AttentionResult attention_with_weights(const MultiHeadAttention& mha, const DiffTensor& queries,
                                       const DiffTensor& keys, const DiffTensor& values) {
  const Index embed = mha.embed_dim();
  for (const DiffTensor* t : {&queries, &keys, &values}) {
    if (t->rank() != 3 || t->dim(-1) != embed) {
      throw IncompatibleShapes("attention expects [B, k, " + std::to_string(embed) + "], got " +
                               to_string(t->shape()));
    }
  }
  if (keys.shape() != values.shape() || keys.dim(0) != queries.dim(0)) {
    throw IncompatibleShapes("attention: keys " + to_string(keys.shape()) + ", values " + to_string(values.shape()) +
                             " and queries " + to_string(queries.shape()) + " disagree");
  }
  const Index head_dim = embed / mha.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const DiffTensor q = linear_forward(mha.query, queries);
  const DiffTensor k = linear_forward(mha.key, keys);
  const DiffTensor v = linear_forward(mha.value, values);

  AttentionResult result;
  std::vector<DiffTensor> heads;
  for (Index h = 0; h < mha.heads; ++h) {
    const DiffTensor qh = slice(q, -1, h * head_dim, head_dim);
    const DiffTensor kh = slice(k, -1, h * head_dim, head_dim);
    const DiffTensor vh = slice(v, -1, h * head_dim, head_dim);
    const DiffTensor weights = softmax(matmul(qh, kh, false, true) * scale);
    heads.push_back(matmul(weights, vh));
    result.weights.push_back(weights);
  }
  result.output = linear_forward(mha.output, concat(heads, -1));
  return result;
}

DiffTensor attention(const MultiHeadAttention& mha, const DiffTensor& queries, const DiffTensor& keys,
                     const DiffTensor& values) {
  return attention_with_weights(mha, queries, keys, values).output;
}

FeedForward FeedForward::create(ParamSource& source, const std::string& prefix, Index embed, Index width,
                                int hidden_layers, ActivationKind kind) {
  if (hidden_layers < 1) throw std::invalid_argument("feedforward needs at least one hidden layer");
  FeedForward ff;
  Index in = embed;
  for (int i = 0; i < hidden_layers; ++i) {
    ff.layers.push_back(LinearLayer::create(source, prefix + ".linear" + std::to_string(i), in, width));
    ff.activations.push_back(Activation::create(source, prefix + ".act" + std::to_string(i), kind));
    in = width;
  }
  ff.layers.push_back(LinearLayer::create(source, prefix + ".linear" + std::to_string(hidden_layers), in, embed));
  return ff;
}

DiffTensor feedforward_forward(const FeedForward& ff, const DiffTensor& x) {
  DiffTensor h = x;
  for (std::size_t i = 0; i < ff.activations.size(); ++i) h = ff.activations[i](linear_forward(ff.layers[i], h));
  return linear_forward(ff.layers.back(), h);
}

EncoderLayer make_encoder_layer(ParamSource& source, const std::string& prefix, const BlockSpec& spec) {
  EncoderLayer layer;
  layer.attention_input = Activation::create(source, prefix + ".attention_act", spec.activation);
  layer.self_attention = MultiHeadAttention::create(source, prefix + ".self_attention", spec.embed, spec.heads);
  layer.feedforward_input = Activation::create(source, prefix + ".feedforward_act", spec.activation);
  layer.feedforward = FeedForward::create(source, prefix + ".feedforward", spec.embed, spec.feedforward_width,
                                          spec.feedforward_layers, spec.activation);
  return layer;
}

DecoderLayer make_decoder_layer(ParamSource& source, const std::string& prefix, const BlockSpec& spec) {
  DecoderLayer layer;
  layer.attention_input = Activation::create(source, prefix + ".attention_act", spec.activation);
  layer.cross_attention = MultiHeadAttention::create(source, prefix + ".cross_attention", spec.embed, spec.heads);
  layer.feedforward_input = Activation::create(source, prefix + ".feedforward_act", spec.activation);
  layer.feedforward = FeedForward::create(source, prefix + ".feedforward", spec.embed, spec.feedforward_width,
                                          spec.feedforward_layers, spec.activation);
  return layer;
}

DiffTensor encoder_forward(const EncoderLayer& layer, const DiffTensor& x) {
  const DiffTensor a = layer.attention_input(x);
  const DiffTensor h = x + attention(layer.self_attention, a, a, a);
  return h + feedforward_forward(layer.feedforward, layer.feedforward_input(h));
}

DiffTensor decoder_forward(const DecoderLayer& layer, const DiffTensor& x, const DiffTensor& encoder_output) {
  if (x.shape() != encoder_output.shape()) {
    throw IncompatibleShapes("decoder input " + to_string(x.shape()) + " and encoder output " +
                             to_string(encoder_output.shape()) + " differ");
  }
  const DiffTensor a = layer.attention_input(x);
  const DiffTensor h = x + attention(layer.cross_attention, a, encoder_output, encoder_output);
  return h + feedforward_forward(layer.feedforward, layer.feedforward_input(h));
}

}  // namespace pinnsformer
