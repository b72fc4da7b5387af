#pragma once

#include <span>
#include <string>
#include <vector>

#include "nugget/config.hpp"
#include "nugget/ops.hpp"
#include "nugget/rng.hpp"

namespace nugget {

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out, undefined when the layer has no bias

  static Linear make(std::size_t in, std::size_t out, bool with_bias, Rng& rng, double std_dev);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor shift;

  static LayerNorm make(std::size_t d);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, shift); }
  void collect(ParamList& out, const std::string& prefix) const;
};

struct FeedForward {
  Linear up;
  Linear down;

  Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }
  void collect(ParamList& out, const std::string& prefix) const;
};

// Scaled dot-product attention over `heads` column blocks. For every head the
// pre-softmax logits are (1/sqrt(d_head)) * (Q K^T + bias), with the same
// bias row added for every query position.
struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  std::size_t heads = 1;

  static MultiHeadAttention make(std::size_t d, std::size_t heads, Rng& rng, double out_std);
  // `logits_out`, when given, receives each head's scaled logits tensor.
  Tensor operator()(const Tensor& queries, const Tensor& memory, const Tensor* bias, const AttentionMask* mask,
                    std::vector<Tensor>* logits_out = nullptr) const;
  // Attention of precomputed per-head projections; shared with incremental decoding.
  Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* bias, const AttentionMask* mask,
                std::vector<Tensor>* logits_out) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct EncoderLayer {
  LayerNorm attn_norm;
  MultiHeadAttention self_attn;
  LayerNorm ffn_norm;
  FeedForward ffn;

  Tensor operator()(const Tensor& x) const;
};

struct DecoderLayer {
  LayerNorm self_norm;
  MultiHeadAttention self_attn;
  LayerNorm cross_norm;
  MultiHeadAttention cross_attn;
  LayerNorm ffn_norm;
  FeedForward ffn;
};

// Additive injection at encoder layer `layer`: X^(layer) + type_embeddings
// feeds block `layer`.
struct Injection {
  std::size_t layer = 0;
  Tensor type_embeddings;  // n x d
};

// Pre-norm transformer encoder. states[0] is the embedding output, states[i]
// the residual stream after block i, and states[L] is passed through the
// final norm.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const ModelConfig& config, Rng& rng);

  std::vector<Tensor> encode(std::span<const TokenId> tokens, const Injection* inject = nullptr) const;

  Tensor embed(std::span<const TokenId> tokens) const;
  // Runs blocks [from, to) on x. The final norm is applied when to == L.
  Tensor run(const Tensor& x, std::size_t from, std::size_t to) const;
  std::size_t layers() const { return blocks_.size(); }

  void collect(ParamList& out, const std::string& prefix) const;

 private:
  void check_tokens(std::span<const TokenId> tokens) const;

  ModelConfig config_;
  Tensor token_table_;
  Tensor position_table_;
  std::vector<EncoderLayer> blocks_;
  LayerNorm final_norm_;
};

// Cross-attention logits of one forward pass, one tensor per (layer, head),
// layer-major. Each has shape target_len x memory_len.
struct AttentionTrace {
  std::vector<Tensor> cross_logits;
};

// Keys and values cached for token-by-token decoding.
struct DecoderState {
  std::vector<Tensor> self_keys;
  std::vector<Tensor> self_values;
  std::vector<Tensor> cross_keys;
  std::vector<Tensor> cross_values;
  Tensor memory_bias;  // undefined when decoding without bias
  std::size_t length = 0;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(const ModelConfig& config, Rng& rng);

  // Teacher-forced vocabulary logits (T x V) for decoder inputs `tokens`
  // conditioned on `memory` (k x d). `memory_bias`, when given, holds k values
  // added inside every cross-attention bracket of every layer and head.
  Tensor decode(std::span<const TokenId> tokens, const Tensor& memory, const Tensor* memory_bias = nullptr,
                AttentionTrace* trace = nullptr) const;

  DecoderState start(const Tensor& memory, const Tensor* memory_bias) const;
  // Feeds one token; returns the next-token logits. Runs without recording.
  std::vector<double> step(DecoderState& state, TokenId token) const;

  std::size_t layers() const { return blocks_.size(); }
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  ModelConfig config_;
  Tensor token_table_;
  Tensor position_table_;
  std::vector<DecoderLayer> blocks_;
  LayerNorm final_norm_;
  Linear vocab_proj_;
};

}  // namespace nugget
