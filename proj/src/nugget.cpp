#include "nugget/nugget.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace nugget {

std::size_t compute_k(std::size_t n, double r) {
  check_ratio(r);
  if (n == 0) throw std::invalid_argument("compute_k: n must be at least 1");
  // Guard against representation error: 0.1 * 130 must give 13, not 14.
  const double product = static_cast<double>(n) * r;
  double k = std::ceil(product);
  if (k - product > 1.0 - 1e-9) k -= 1.0;
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n);
}

ScorerParams ScorerParams::make(std::size_t d, Rng& rng) {
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(d));
  ScorerParams p;
  p.hidden = Linear::make(d, d, true, rng, std_dev);
  p.out = Linear::make(d, 1, true, rng, std_dev);
  std::vector<double> n_type(d), o_type(d), proj(d * d);
  for (auto& v : n_type) v = 0.1 * rng.normal();
  for (auto& v : o_type) v = 0.1 * rng.normal();
  for (auto& v : proj) v = std_dev * rng.normal();
  p.nugget_type = Tensor::from({d}, std::move(n_type), true);
  p.other_type = Tensor::from({d}, std::move(o_type), true);
  p.value_proj = Tensor::from({d, d}, std::move(proj), true);
  return p;
}

void ScorerParams::collect(ParamList& out, const std::string& prefix) const {
  hidden.collect(out, prefix + ".hidden");
  this->out.collect(out, prefix + ".out");
  out.push_back({prefix + ".nugget_type", nugget_type});
  out.push_back({prefix + ".other_type", other_type});
  out.push_back({prefix + ".value_proj", value_proj});
}

Tensor score_tokens(const ScorerParams& params, const Tensor& states) {
  Tensor s = params.out(gelu(params.hidden(states)));
  return reshape(s, {states.rows()});
}

nlohmann::json NuggetSet::to_json() const {
  std::vector<double> selected(selected_scores.data().begin(), selected_scores.data().end());
  return nlohmann::json{{"indices", indices}, {"scores", selected}, {"r", ratio}, {"k", k}};
}

std::vector<std::size_t> chunking_selector(const Document& doc, double r, std::span<const TokenId> punctuation) {
  const std::size_t n = doc.tokens.size();
  const std::size_t k = compute_k(n, r);
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t begin = c * n / k, end = (c + 1) * n / k;
    std::size_t choice = end - 1;
    for (std::size_t i = end; i-- > begin;) {
      if (std::find(punctuation.begin(), punctuation.end(), doc.tokens[i]) != punctuation.end()) {
        choice = i;
        break;
      }
    }
    picked.push_back(choice);
  }
  return picked;
}

std::vector<std::size_t> sentence_boundary_selector(const Document& doc) {
  if (doc.sentence_ends.empty())
    throw std::invalid_argument("sentence_boundary_selector: document '" + doc.doc_id + "' has no sentence boundaries");
  for (std::size_t i = 0; i < doc.sentence_ends.size(); ++i) {
    if (doc.sentence_ends[i] >= doc.tokens.size() || (i && doc.sentence_ends[i] <= doc.sentence_ends[i - 1]))
      throw std::invalid_argument("sentence_boundary_selector: malformed sentence boundaries in '" + doc.doc_id + "'");
  }
  return doc.sentence_ends;
}

NuggetModel::NuggetModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  encoder_ = Encoder(config_, rng);
  scorer_ = ScorerParams::make(config_.d_model, rng);
  std::vector<double> null_init(config_.d_model);
  for (auto& v : null_init) v = rng.normal();
  null_memory_ = Tensor::from({1, config_.d_model}, std::move(null_init), true);
  decoder_ = Decoder(config_, rng);
}

Tensor NuggetModel::type_embeddings(std::size_t n, std::span<const std::size_t> selected) const {
  std::vector<std::size_t> rows(n, 0);
  for (std::size_t i : selected) rows.at(i) = 1;
  const Tensor table_parts[2] = {reshape(scorer_.other_type, {1, config_.d_model}),
                                 reshape(scorer_.nugget_type, {1, config_.d_model})};
  return gather_rows(concat_rows(table_parts), rows);
}

NuggetSet NuggetModel::generate(std::span<const TokenId> tokens, const Document* doc,
                                std::optional<double> ratio) const {
  const double r = ratio.value_or(config_.ratio);
  const std::size_t n = tokens.size();
  const std::size_t layer = config_.scorer_layer;
  const std::size_t depth = encoder_.layers();

  NuggetSet out;
  out.ratio = r;
  Tensor lower = encoder_.run(encoder_.embed(tokens), 0, layer);
  if (config_.selector == SelectorKind::learned) {
    out.token_scores = score_tokens(scorer_, lower);
    out.indices = topk_indices(out.token_scores.data(), compute_k(n, r));
  } else {
    if (!doc) throw std::invalid_argument("generate: rule-based selectors need the source document");
    if (doc->tokens.size() != n) throw std::invalid_argument("generate: document does not match the token sequence");
    out.token_scores = Tensor::zeros({n});
    out.indices = config_.selector == SelectorKind::chunking ? chunking_selector(*doc, r, punctuation_)
                                                             : sentence_boundary_selector(*doc);
  }
  out.k = out.indices.size();

  Tensor top;
  if (layer == depth) {
    top = lower;
  } else if (config_.feedback) {
    top = encoder_.run(add(lower, type_embeddings(n, out.indices)), layer, depth);
  } else {
    top = encoder_.run(lower, layer, depth);
  }
  out.vectors = matmul(gather_rows(top, out.indices), scorer_.value_proj);
  out.selected_scores = gather(out.token_scores, out.indices);
  return out;
}

const Tensor* NuggetModel::memory_bias(const NuggetSet& nuggets, bool training) const {
  if (config_.selector != SelectorKind::learned || !config_.bias_path) return nullptr;
  if (!training && !config_.use_bias_at_inference) return nullptr;
  return &nuggets.selected_scores;
}

Tensor NuggetModel::decode(const NuggetSet& nuggets, std::span<const TokenId> decoder_inputs, bool training,
                           AttentionTrace* trace) const {
  return decoder_.decode(decoder_inputs, nuggets.vectors, memory_bias(nuggets, training), trace);
}

Tensor NuggetModel::decode_unconditional(std::span<const TokenId> decoder_inputs) const {
  return decoder_.decode(decoder_inputs, null_memory_, nullptr, nullptr);
}

ParamList NuggetModel::parameters() const {
  ParamList params;
  encoder_.collect(params, "encoder");
  scorer_.collect(params, "scorer");
  params.push_back({"null_memory", null_memory_});
  decoder_.collect(params, "decoder");
  return params;
}

std::vector<std::string> NuggetModel::freeze_encoder_below(std::size_t layer) {
  const std::size_t depth = encoder_.layers();
  if (layer > depth + 1) throw ConfigError("freeze_below", "must not exceed encoder_layers + 1");
  std::vector<std::string> frozen;
  if (layer == 0) return frozen;
  for (auto& p : parameters()) {
    const std::string& name = p.name;
    if (name.rfind("encoder.", 0) != 0) continue;
    bool freeze = false;
    if (name == "encoder.token_table" || name == "encoder.position_table") {
      freeze = true;
    } else if (name.rfind("encoder.layer", 0) == 0) {
      const std::size_t idx = std::stoul(name.substr(std::string("encoder.layer").size()));
      freeze = idx < layer;
    } else if (name.rfind("encoder.final_norm", 0) == 0) {
      freeze = layer == depth + 1;
    }
    if (freeze) {
      p.tensor.set_requires_grad(false);
      frozen.push_back(name);
    }
  }
  return frozen;
}

ScoreGradientCheck check_score_gradient(const NuggetModel& model, std::span<const TokenId> tokens) {
  for (auto& p : model.parameters()) p.tensor.zero_grad();
  const NuggetSet nuggets = model.generate(tokens);
  AttentionTrace trace;
  const Tensor logits = model.decode(nuggets, decoder_inputs_for(tokens), true, &trace);
  Tensor loss = cross_entropy_nll(logits, decoder_outputs_for(tokens));
  backward(loss);

  ScoreGradientCheck check;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(model.config().d_model / model.config().heads));
  const Tensor* bias = model.memory_bias(nuggets, true);
  if (bias && bias->has_grad()) {
    std::vector<double> summed(nuggets.k, 0.0);
    for (const auto& a : trace.cross_logits) {
      if (!a.has_grad()) continue;
      const auto g = a.grad();
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t j = 0; j < nuggets.k; ++j) summed[j] += g[r * nuggets.k + j];
    }
    const auto ds = bias->grad();
    for (std::size_t j = 0; j < nuggets.k; ++j) {
      check.max_abs_deviation = std::max(check.max_abs_deviation, std::abs(ds[j] - inv_sqrt * summed[j]));
      check.max_abs_gradient = std::max(check.max_abs_gradient, std::abs(ds[j]));
      ++check.compared;
    }
  }
  for (const auto& p : model.parameters()) {
    if (p.name.rfind("scorer.hidden", 0) != 0 && p.name.rfind("scorer.out", 0) != 0) continue;
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) check.max_scorer_gradient = std::max(check.max_scorer_gradient, std::abs(g));
  }
  for (auto& p : model.parameters()) p.tensor.zero_grad();
  return check;
}

std::vector<TokenId> decoder_inputs_for(std::span<const TokenId> target) {
  std::vector<TokenId> in;
  in.reserve(target.size() + 1);
  in.push_back(kBos);
  in.insert(in.end(), target.begin(), target.end());
  return in;
}

std::vector<TokenId> decoder_outputs_for(std::span<const TokenId> target) {
  std::vector<TokenId> out(target.begin(), target.end());
  out.push_back(kEos);
  return out;
}

}  // namespace nugget
