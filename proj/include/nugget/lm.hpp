#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "nugget/nugget.hpp"
#include "nugget/training.hpp"

namespace nugget {

// Nugget sets of the most recent past segments, oldest first.
class SegmentMemory {
 public:
  explicit SegmentMemory(std::size_t history) : history_(history) {}

  // Appends a segment's nuggets, evicting the oldest beyond `history`.
  void push(NuggetSet nuggets);
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t history() const { return history_; }
  const std::deque<NuggetSet>& entries() const { return entries_; }

  // Concatenated nugget vectors and their biases, chronological.
  Tensor vectors() const;
  Tensor bias() const;

 private:
  std::size_t history_;
  std::deque<NuggetSet> entries_;
};

NuggetSet compress_segment(const NuggetModel& model, std::span<const TokenId> tokens, double ratio);

// Decoder logits over the segment's decoder inputs ([BOS] + prefix), with
// cross-attention over the memory (or the null slot when it is empty).
Tensor lm_logits(const NuggetModel& model, std::span<const TokenId> decoder_inputs, const SegmentMemory& memory);

// Next-token logits after `recent`, which starts with BOS.
std::vector<double> lm_step(const NuggetModel& model, std::span<const TokenId> recent, const SegmentMemory& memory);

struct PerplexityResult {
  double perplexity = 0.0;
  double mean_nll = 0.0;
  std::size_t tokens = 0;
  std::size_t segments = 0;
};

// exp(mean NLL) over every token of the stream, segment by segment, each
// segment seeing its own prefix plus the nuggets of the `history` previous
// segments.
PerplexityResult perplexity(const NuggetModel& model, std::span<const TokenId> stream, std::size_t seg_len,
                            std::size_t history, double ratio);

// Per-token log-probabilities under the same protocol, segment-major.
std::vector<double> stream_log_probs(const NuggetModel& model, std::span<const TokenId> stream, std::size_t seg_len,
                                     std::size_t history, double ratio);

struct LmTrainOptions {
  std::size_t seg_len = 128;
  std::size_t history = 1;
  double ratio = 0.25;
};

// Samples segments with their history, trains the whole stack through the
// memory path. `log` runs after every step.
std::vector<TrainMetrics> train_lm(Trainer& trainer, std::span<const TokenId> stream, const LmTrainOptions& options,
                                   const std::function<void(const TrainMetrics&)>& log = {});

}  // namespace nugget
