#include "nugget/transformer.hpp"

#include <cmath>

namespace nugget {

namespace {

Tensor random_normal(Shape shape, double std_dev, Rng& rng) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = std_dev * rng.normal();
  return Tensor::from(std::move(shape), std::move(data), true);
}

Tensor positions_for(const Tensor& table, std::size_t begin, std::size_t count) {
  return slice_rows(table, begin, begin + count);
}

}  // namespace

Linear Linear::make(std::size_t in, std::size_t out, bool with_bias, Rng& rng, double std_dev) {
  Linear layer;
  layer.weight = random_normal({in, out}, std_dev, rng);
  if (with_bias) layer.bias = Tensor::zeros({out}, true);
  return layer;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_row_bias(y, bias) : y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNorm LayerNorm::make(std::size_t d) {
  return LayerNorm{Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".shift", shift});
}

void FeedForward::collect(ParamList& out, const std::string& prefix) const {
  up.collect(out, prefix + ".up");
  down.collect(out, prefix + ".down");
}

MultiHeadAttention MultiHeadAttention::make(std::size_t d, std::size_t heads, Rng& rng, double out_std) {
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  MultiHeadAttention attn;
  attn.query = Linear::make(d, d, true, rng, in_std);
  attn.key = Linear::make(d, d, true, rng, in_std);
  attn.value = Linear::make(d, d, true, rng, in_std);
  attn.output = Linear::make(d, d, true, rng, out_std);
  attn.heads = heads;
  return attn;
}

Tensor MultiHeadAttention::attend(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* bias,
                                  const AttentionMask* mask, std::vector<Tensor>* logits_out) const {
  const std::size_t d = q.cols();
  const std::size_t width = d / heads;
  const double factor = 1.0 / std::sqrt(static_cast<double>(width));
  if (bias && bias->numel() != k.rows())
    throw DimensionError("attention bias has " + std::to_string(bias->numel()) + " values for " +
                         std::to_string(k.rows()) + " memory slots");
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * width, hi = lo + width;
    Tensor qh = heads == 1 ? q : slice_cols(q, lo, hi);
    Tensor kh = heads == 1 ? k : slice_cols(k, lo, hi);
    Tensor vh = heads == 1 ? v : slice_cols(v, lo, hi);
    Tensor logits = matmul(qh, transpose(kh));
    if (bias) logits = add_row_bias(logits, *bias);
    logits = scale(logits, factor);
    if (logits_out) logits_out->push_back(logits);
    outputs.push_back(matmul(softmax_rows(logits, mask), vh));
  }
  return heads == 1 ? outputs[0] : concat_cols(outputs);
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& memory, const Tensor* bias,
                                      const AttentionMask* mask, std::vector<Tensor>* logits_out) const {
  Tensor q = query(queries);
  Tensor k = key(memory);
  Tensor v = value(memory);
  return output(attend(q, k, v, bias, mask, logits_out));
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
  query.collect(out, prefix + ".query");
  key.collect(out, prefix + ".key");
  value.collect(out, prefix + ".value");
  output.collect(out, prefix + ".output");
}

Tensor EncoderLayer::operator()(const Tensor& x) const {
  Tensor h = attn_norm(x);
  Tensor y = add(x, self_attn(h, h, nullptr, nullptr));
  return add(y, ffn(ffn_norm(y)));
}

Encoder::Encoder(const ModelConfig& config, Rng& rng) : config_(config) {
  const std::size_t d = config.d_model;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_std = in_std / std::sqrt(2.0 * static_cast<double>(config.encoder_layers));
  token_table_ = random_normal({config.vocab_size, d}, 1.0, rng);
  if (config.position_embeddings) position_table_ = random_normal({config.max_len, d}, 1.0, rng);
  for (std::size_t i = 0; i < config.encoder_layers; ++i) {
    EncoderLayer layer;
    layer.attn_norm = LayerNorm::make(d);
    layer.self_attn = MultiHeadAttention::make(d, config.heads, rng, out_std);
    layer.ffn_norm = LayerNorm::make(d);
    layer.ffn.up = Linear::make(d, config.d_ff, true, rng, in_std);
    layer.ffn.down = Linear::make(config.d_ff, d, true, rng,
                                  out_std * std::sqrt(static_cast<double>(d) / static_cast<double>(config.d_ff)));
    blocks_.push_back(std::move(layer));
  }
  final_norm_ = LayerNorm::make(d);
}

void Encoder::check_tokens(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("encode: empty input");
  if (tokens.size() > config_.max_len)
    throw std::length_error("encode: " + std::to_string(tokens.size()) + " tokens exceed max_len " +
                            std::to_string(config_.max_len));
}

Tensor Encoder::embed(std::span<const TokenId> tokens) const {
  check_tokens(tokens);
  Tensor x = embedding_lookup(token_table_, tokens);
  if (position_table_.defined()) x = add(x, positions_for(position_table_, 0, tokens.size()));
  return x;
}

Tensor Encoder::run(const Tensor& x, std::size_t from, std::size_t to) const {
  Tensor h = x;
  for (std::size_t i = from; i < to; ++i) h = blocks_[i](h);
  if (to == blocks_.size()) h = final_norm_(h);
  return h;
}

std::vector<Tensor> Encoder::encode(std::span<const TokenId> tokens, const Injection* inject) const {
  const std::size_t depth = blocks_.size();
  if (inject) {
    if (inject->layer >= depth)
      throw std::out_of_range("encode: injection layer " + std::to_string(inject->layer) + " must be below " +
                              std::to_string(depth));
    if (inject->type_embeddings.rows() != tokens.size() || inject->type_embeddings.cols() != config_.d_model)
      throw DimensionError("encode: type embeddings " + shape_string(inject->type_embeddings.shape()) +
                           " do not match " + std::to_string(tokens.size()) + " tokens");
  }
  std::vector<Tensor> states;
  states.reserve(depth + 1);
  Tensor x = embed(tokens);
  if (depth == 0) x = final_norm_(x);
  states.push_back(x);
  for (std::size_t i = 0; i < depth; ++i) {
    if (inject && inject->layer == i) x = add(x, inject->type_embeddings);
    x = blocks_[i](x);
    if (i + 1 == depth) x = final_norm_(x);
    states.push_back(x);
  }
  return states;
}

void Encoder::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".token_table", token_table_});
  if (position_table_.defined()) out.push_back({prefix + ".position_table", position_table_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    blocks_[i].attn_norm.collect(out, p + ".attn_norm");
    blocks_[i].self_attn.collect(out, p + ".self_attn");
    blocks_[i].ffn_norm.collect(out, p + ".ffn_norm");
    blocks_[i].ffn.collect(out, p + ".ffn");
  }
  final_norm_.collect(out, prefix + ".final_norm");
}

Decoder::Decoder(const ModelConfig& config, Rng& rng) : config_(config) {
  const std::size_t d = config.d_model;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_std = in_std / std::sqrt(3.0 * static_cast<double>(config.decoder_layers));
  token_table_ = random_normal({config.vocab_size, d}, 1.0, rng);
  if (config.position_embeddings) position_table_ = random_normal({config.max_len, d}, 1.0, rng);
  for (std::size_t i = 0; i < config.decoder_layers; ++i) {
    DecoderLayer layer;
    layer.self_norm = LayerNorm::make(d);
    layer.self_attn = MultiHeadAttention::make(d, config.heads, rng, out_std);
    layer.cross_norm = LayerNorm::make(d);
    layer.cross_attn = MultiHeadAttention::make(d, config.heads, rng, out_std);
    layer.ffn_norm = LayerNorm::make(d);
    layer.ffn.up = Linear::make(d, config.d_ff, true, rng, in_std);
    layer.ffn.down = Linear::make(config.d_ff, d, true, rng,
                                  out_std * std::sqrt(static_cast<double>(d) / static_cast<double>(config.d_ff)));
    blocks_.push_back(std::move(layer));
  }
  final_norm_ = LayerNorm::make(d);
  vocab_proj_ = Linear::make(d, config.vocab_size, true, rng, in_std);
}

Tensor Decoder::decode(std::span<const TokenId> tokens, const Tensor& memory, const Tensor* memory_bias,
                       AttentionTrace* trace) const {
  if (tokens.empty()) throw std::invalid_argument("decode: empty target sequence");
  if (tokens.size() > config_.max_len)
    throw std::length_error("decode: " + std::to_string(tokens.size()) + " tokens exceed max_len " +
                            std::to_string(config_.max_len));
  if (!memory.defined() || memory.rank() != 2 || memory.rows() == 0)
    throw std::invalid_argument("decode: memory must hold at least one slot");
  if (memory.cols() != config_.d_model)
    throw DimensionError("decode: memory width " + std::to_string(memory.cols()) + " != d_model " +
                         std::to_string(config_.d_model));
  if (memory_bias && memory_bias->numel() != memory.rows())
    throw DimensionError("decode: memory_bias has " + std::to_string(memory_bias->numel()) + " values for " +
                         std::to_string(memory.rows()) + " memory slots");
  Tensor x = embedding_lookup(token_table_, tokens);
  if (position_table_.defined()) x = add(x, positions_for(position_table_, 0, tokens.size()));
  const AttentionMask causal = AttentionMask::causal(tokens.size());
  for (const auto& layer : blocks_) {
    Tensor h = layer.self_norm(x);
    x = add(x, layer.self_attn(h, h, nullptr, &causal));
    x = add(x, layer.cross_attn(layer.cross_norm(x), memory, memory_bias, nullptr,
                                trace ? &trace->cross_logits : nullptr));
    x = add(x, layer.ffn(layer.ffn_norm(x)));
  }
  return vocab_proj_(final_norm_(x));
}

DecoderState Decoder::start(const Tensor& memory, const Tensor* memory_bias) const {
  if (!memory.defined() || memory.rows() == 0) throw std::invalid_argument("decode: memory must hold at least one slot");
  NoGradGuard no_grad;
  DecoderState state;
  for (const auto& layer : blocks_) {
    state.cross_keys.push_back(layer.cross_attn.key(memory));
    state.cross_values.push_back(layer.cross_attn.value(memory));
  }
  state.self_keys.resize(blocks_.size());
  state.self_values.resize(blocks_.size());
  if (memory_bias) state.memory_bias = memory_bias->detach();
  return state;
}

std::vector<double> Decoder::step(DecoderState& state, TokenId token) const {
  if (state.length >= config_.max_len) throw std::length_error("decode: sequence reached max_len");
  NoGradGuard no_grad;
  const TokenId ids[1] = {token};
  Tensor x = embedding_lookup(token_table_, ids);
  if (position_table_.defined()) x = add(x, positions_for(position_table_, state.length, 1));
  const Tensor* bias = state.memory_bias.defined() ? &state.memory_bias : nullptr;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& layer = blocks_[i];
    Tensor h = layer.self_norm(x);
    Tensor q = layer.self_attn.query(h);
    Tensor k = layer.self_attn.key(h);
    Tensor v = layer.self_attn.value(h);
    if (state.length == 0) {
      state.self_keys[i] = k;
      state.self_values[i] = v;
    } else {
      const Tensor ks[2] = {state.self_keys[i], k};
      const Tensor vs[2] = {state.self_values[i], v};
      state.self_keys[i] = concat_rows(ks);
      state.self_values[i] = concat_rows(vs);
    }
    x = add(x, layer.self_attn.output(
                   layer.self_attn.attend(q, state.self_keys[i], state.self_values[i], nullptr, nullptr, nullptr)));
    Tensor cq = layer.cross_attn.query(layer.cross_norm(x));
    x = add(x, layer.cross_attn.output(
                   layer.cross_attn.attend(cq, state.cross_keys[i], state.cross_values[i], bias, nullptr, nullptr)));
    x = add(x, layer.ffn(layer.ffn_norm(x)));
  }
  ++state.length;
  Tensor logits = vocab_proj_(final_norm_(x));
  return {logits.data().begin(), logits.data().end()};
}

void Decoder::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".token_table", token_table_});
  if (position_table_.defined()) out.push_back({prefix + ".position_table", position_table_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    blocks_[i].self_norm.collect(out, p + ".self_norm");
    blocks_[i].self_attn.collect(out, p + ".self_attn");
    blocks_[i].cross_norm.collect(out, p + ".cross_norm");
    blocks_[i].cross_attn.collect(out, p + ".cross_attn");
    blocks_[i].ffn_norm.collect(out, p + ".ffn_norm");
    blocks_[i].ffn.collect(out, p + ".ffn");
  }
  final_norm_.collect(out, prefix + ".final_norm");
  vocab_proj_.collect(out, prefix + ".vocab_proj");
}

}  // namespace nugget
