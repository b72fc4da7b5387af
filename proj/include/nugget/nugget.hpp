#pragma once

#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "nugget/config.hpp"
#include "nugget/data.hpp"
#include "nugget/transformer.hpp"

namespace nugget {

// Number of nuggets for n tokens at ratio r: ceil(n * r), never below 1.
std::size_t compute_k(std::size_t n, double r);

// Two-layer scorer (d -> d -> 1, GELU), the nugget/other type embeddings and
// the value projection applied to selected last-layer states.
struct ScorerParams {
  Linear hidden;
  Linear out;
  Tensor nugget_type;  // d
  Tensor other_type;   // d
  Tensor value_proj;   // d x d

  static ScorerParams make(std::size_t d, Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

// Per-token scalar logits (rank 1, length n) from layer states n x d.
Tensor score_tokens(const ScorerParams& params, const Tensor& states);

struct NuggetSet {
  std::vector<std::size_t> indices;  // ascending token positions
  Tensor token_scores;                // all n scores
  Tensor selected_scores;             // scores at `indices`, the decoder bias
  Tensor vectors;                     // k x d, row i belongs to indices[i]
  double ratio = 1.0;
  std::size_t k = 0;

  nlohmann::json to_json() const;
};

// Splits the document into ceil(n r) equal chunks and takes the last comma or
// period of each chunk, else the chunk's last token.
std::vector<std::size_t> chunking_selector(const Document& doc, double r, std::span<const TokenId> punctuation);
// Last token of every sentence.
std::vector<std::size_t> sentence_boundary_selector(const Document& doc);

class NuggetModel {
 public:
  explicit NuggetModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }

  // Scores at layer `scorer_layer`, selects k = ceil(n r) tokens (or applies
  // the rule-based selector), injects type embeddings there when feedback is
  // on, finishes the encoder and projects the selected last-layer states.
  // `doc` is required by the rule-based selectors; `ratio` overrides the
  // configured ratio.
  NuggetSet generate(std::span<const TokenId> tokens, const Document* doc = nullptr,
                     std::optional<double> ratio = std::nullopt) const;

  // Type embedding matrix E (n x d) for a selection.
  Tensor type_embeddings(std::size_t n, std::span<const std::size_t> selected) const;

  // Bias handed to the decoder for these nuggets, or nullptr.
  const Tensor* memory_bias(const NuggetSet& nuggets, bool training) const;

  // Decoder logits for inputs conditioned on the nuggets.
  Tensor decode(const NuggetSet& nuggets, std::span<const TokenId> decoder_inputs, bool training,
                AttentionTrace* trace = nullptr) const;
  // Decoder logits against the learned null memory slot alone.
  Tensor decode_unconditional(std::span<const TokenId> decoder_inputs) const;

  const Tensor& null_memory() const { return null_memory_; }
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }
  const ScorerParams& scorer() const { return scorer_; }

  void set_punctuation(std::vector<TokenId> ids) { punctuation_ = std::move(ids); }
  std::span<const TokenId> punctuation() const { return punctuation_; }

  // All parameters under stable names, in a fixed order.
  ParamList parameters() const;
  // Marks encoder embeddings and blocks below `layer` (plus the final norm
  // when layer == L + 1) as not requiring gradients; returns their names.
  std::vector<std::string> freeze_encoder_below(std::size_t layer);

 private:
  ModelConfig config_;
  Encoder encoder_;
  ScorerParams scorer_;
  Tensor null_memory_;  // 1 x d
  Decoder decoder_;
  std::vector<TokenId> punctuation_;
};

struct ScoreGradientCheck {
  // max_j |dl/ds_j - (1/sqrt(d_head)) sum over layers, heads and target
  // positions of dl/da[., j]|
  double max_abs_deviation = 0.0;
  double max_abs_gradient = 0.0;
  std::size_t compared = 0;
  // Largest |gradient| reaching scorer parameters.
  double max_scorer_gradient = 0.0;
};

// One teacher-forced reconstruction loss of `tokens`, back-propagated with the
// cross-attention logits recorded.
ScoreGradientCheck check_score_gradient(const NuggetModel& model, std::span<const TokenId> tokens);

// Decoder input ([BOS] + target) and output (target + [EOS]) sequences.
std::vector<TokenId> decoder_inputs_for(std::span<const TokenId> target);
std::vector<TokenId> decoder_outputs_for(std::span<const TokenId> target);

}  // namespace nugget
