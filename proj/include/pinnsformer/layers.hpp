#pragma once

// Neural building blocks.  A layer holds DiffTensor handles obtained from a
// ParamSource, so the same code both initializes a store and binds it to a
// graph for one evaluation.  No block uses a normalization layer; the
// activation sits where a Transformer would put LayerNorm.

#include <string>
#include <string_view>
#include <vector>

#include "pinnsformer/param_store.hpp"
#include "pinnsformer/tensor.hpp"

namespace pinnsformer {

enum class ActivationKind { wavelet, tanh, sin, relu, sigmoid };

ActivationKind parse_activation(std::string_view name);
const char* to_string(ActivationKind kind);

struct LinearLayer {
  DiffTensor weight;  // [out, in]
  DiffTensor bias;    // [out]

  static LinearLayer create(ParamSource& source, const std::string& prefix, Index in, Index out);
  Index in_features() const { return weight.dim(1); }
  Index out_features() const { return weight.dim(0); }
};

DiffTensor linear_forward(const LinearLayer& layer, const DiffTensor& x);

// omega1 * sin(x) + omega2 * cos(x) with learnable scalars.
struct WaveletActivation {
  DiffTensor omega1;
  DiffTensor omega2;

  static WaveletActivation create(ParamSource& source, const std::string& prefix);
};

DiffTensor wavelet(const WaveletActivation& act, const DiffTensor& x);

struct Activation {
  ActivationKind kind = ActivationKind::wavelet;
  WaveletActivation wavelet;  // only populated for ActivationKind::wavelet

  static Activation create(ParamSource& source, const std::string& prefix, ActivationKind kind);
  DiffTensor operator()(const DiffTensor& x) const;
};

struct MultiHeadAttention {
  Index heads = 1;
  LinearLayer query;
  LinearLayer key;
  LinearLayer value;
  LinearLayer output;

  static MultiHeadAttention create(ParamSource& source, const std::string& prefix, Index embed, Index heads);
  Index embed_dim() const { return query.in_features(); }
};

struct AttentionResult {
  DiffTensor output;                // [B, k_query, e]
  std::vector<DiffTensor> weights;  // per head, [B, k_query, k_key]
};

// Per head softmax(Q K^T / sqrt(e / h)) V, heads concatenated and projected.
AttentionResult attention_with_weights(const MultiHeadAttention& mha, const DiffTensor& queries,
                                       const DiffTensor& keys, const DiffTensor& values);
DiffTensor attention(const MultiHeadAttention& mha, const DiffTensor& queries, const DiffTensor& keys,
                     const DiffTensor& values);

// embed -> width -> ... -> width -> embed, activation after every hidden layer.
struct FeedForward {
  std::vector<LinearLayer> layers;
  std::vector<Activation> activations;

  static FeedForward create(ParamSource& source, const std::string& prefix, Index embed, Index width,
                            int hidden_layers, ActivationKind kind);
};

DiffTensor feedforward_forward(const FeedForward& ff, const DiffTensor& x);

struct EncoderLayer {
  Activation attention_input;
  MultiHeadAttention self_attention;
  Activation feedforward_input;
  FeedForward feedforward;
};

// The decoder has no self-attention: only attention over the encoder output.
struct DecoderLayer {
  Activation attention_input;
  MultiHeadAttention cross_attention;
  Activation feedforward_input;
  FeedForward feedforward;
};

struct BlockSpec {
  Index embed = 32;
  Index heads = 2;
  Index feedforward_width = 256;
  int feedforward_layers = 2;
  ActivationKind activation = ActivationKind::wavelet;
};

EncoderLayer make_encoder_layer(ParamSource& source, const std::string& prefix, const BlockSpec& spec);
DecoderLayer make_decoder_layer(ParamSource& source, const std::string& prefix, const BlockSpec& spec);

// x + attn(a(x)), then x + ff(a'(x)); shapes are preserved.
DiffTensor encoder_forward(const EncoderLayer& layer, const DiffTensor& x);
DiffTensor decoder_forward(const DecoderLayer& layer, const DiffTensor& x, const DiffTensor& encoder_output);

}  // namespace pinnsformer
