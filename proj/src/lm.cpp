#include "nugget/lm.hpp"

#include <cmath>

namespace nugget {

void SegmentMemory::push(NuggetSet nuggets) {
  if (history_ == 0) return;
  entries_.push_back(std::move(nuggets));
  while (entries_.size() > history_) entries_.pop_front();
}

Tensor SegmentMemory::vectors() const {
  if (entries_.empty()) throw std::logic_error("SegmentMemory: empty memory has no vectors");
  std::vector<Tensor> parts;
  for (const auto& e : entries_) parts.push_back(e.vectors);
  return parts.size() == 1 ? parts[0] : concat_rows(parts);
}

Tensor SegmentMemory::bias() const {
  if (entries_.empty()) throw std::logic_error("SegmentMemory: empty memory has no bias");
  std::vector<Tensor> parts;
  for (const auto& e : entries_) parts.push_back(reshape(e.selected_scores, {1, e.k}));
  Tensor row = parts.size() == 1 ? parts[0] : concat_cols(parts);
  return reshape(row, {row.numel()});
}

NuggetSet compress_segment(const NuggetModel& model, std::span<const TokenId> tokens, double ratio) {
  if (tokens.empty()) throw std::invalid_argument("compress_segment: empty segment");
  return model.generate(tokens, nullptr, ratio);
}

Tensor lm_logits(const NuggetModel& model, std::span<const TokenId> decoder_inputs, const SegmentMemory& memory) {
  if (decoder_inputs.empty()) throw std::invalid_argument("lm: recent tokens must not be empty");
  if (memory.empty()) return model.decode_unconditional(decoder_inputs);
  const ModelConfig& cfg = model.config();
  const bool with_bias = cfg.selector == SelectorKind::learned && cfg.bias_path && cfg.use_bias_at_inference;
  const Tensor vectors = memory.vectors();
  if (!with_bias) return model.decoder().decode(decoder_inputs, vectors, nullptr);
  const Tensor bias = memory.bias();
  return model.decoder().decode(decoder_inputs, vectors, &bias);
}

std::vector<double> lm_step(const NuggetModel& model, std::span<const TokenId> recent, const SegmentMemory& memory) {
  if (recent.empty()) throw std::invalid_argument("lm_step: recent tokens must not be empty");
  NoGradGuard no_grad;
  const Tensor logits = lm_logits(model, recent, memory);
  const std::size_t v = logits.cols();
  const auto last = logits.data().subspan((logits.rows() - 1) * v, v);
  return {last.begin(), last.end()};
}

std::vector<double> stream_log_probs(const NuggetModel& model, std::span<const TokenId> stream, std::size_t seg_len,
                                     std::size_t history, double ratio) {
  if (seg_len == 0) throw std::invalid_argument("perplexity: seg_len must be positive");
  if (seg_len > model.config().max_len) throw std::invalid_argument("perplexity: seg_len exceeds max_len");
  NoGradGuard no_grad;
  SegmentMemory memory(history);
  std::vector<double> out;
  for (const auto& segment : segment_corpus(stream, seg_len)) {
    std::vector<TokenId> inputs{kBos};
    inputs.insert(inputs.end(), segment.begin(), segment.end() - 1);
    const Tensor logits = lm_logits(model, inputs, memory);
    const std::size_t v = logits.cols();
    for (std::size_t i = 0; i < segment.size(); ++i) {
      const auto lp = log_softmax(logits.data().subspan(i * v, v));
      out.push_back(lp[static_cast<std::size_t>(segment[i])]);
    }
    if (history > 0) memory.push(compress_segment(model, segment, ratio));
  }
  return out;
}

PerplexityResult perplexity(const NuggetModel& model, std::span<const TokenId> stream, std::size_t seg_len,
                            std::size_t history, double ratio) {
  if (stream.empty()) throw std::invalid_argument("perplexity: empty corpus");
  const auto lp = stream_log_probs(model, stream, seg_len, history, ratio);
  PerplexityResult r;
  double nll = 0.0;
  for (double x : lp) nll -= x;
  r.tokens = lp.size();
  r.segments = (stream.size() + seg_len - 1) / seg_len;
  r.mean_nll = nll / static_cast<double>(r.tokens);
  r.perplexity = std::exp(r.mean_nll);
  return r;
}

std::vector<TrainMetrics> train_lm(Trainer& trainer, std::span<const TokenId> stream, const LmTrainOptions& options,
                                   const std::function<void(const TrainMetrics&)>& log) {
  check_ratio(options.ratio);
  const auto segments = segment_corpus(stream, options.seg_len);
  if (segments.size() <= options.history) throw std::invalid_argument("train_lm: corpus shorter than the history");
  const TrainConfig& cfg = trainer.config();
  // Targets are segments that have their full history available.
  BatchSampler sampler(segments.size() - options.history, cfg.batch_size, cfg.seed ^ 0x1a5eULL);
  std::vector<TrainMetrics> history;
  for (std::size_t s = 0; s < cfg.max_steps; ++s) {
    const auto batch = sampler.next();
    history.push_back(trainer.step_with(batch.size(), [&](std::size_t b) {
      const std::size_t target = batch[b] + options.history;
      SegmentMemory memory(options.history);
      for (std::size_t p = target - options.history; p < target; ++p)
        memory.push(compress_segment(trainer.model(), segments[p], options.ratio));
      const auto& seg = segments[target];
      std::vector<TokenId> inputs{kBos};
      inputs.insert(inputs.end(), seg.begin(), seg.end() - 1);
      return std::make_pair(nll_loss(lm_logits(trainer.model(), inputs, memory), seg), seg.size());
    }));
    if (log) log(history.back());
  }
  return history;
}

}  // namespace nugget
