#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nugget/data.hpp"
#include "nugget/nugget.hpp"

namespace nugget {

struct DecodeResult {
  std::vector<TokenId> tokens;  // without BOS/EOS
  double log_prob = 0.0;
  bool finished = false;  // false when max_len was hit before EOS
};

// Beam search over an arbitrary incremental scorer. `advance(state, token)`
// feeds one token and returns next-token log-probabilities; states are copied
// when hypotheses branch. Hypotheses are ranked by cumulative log-prob during
// the search and finished ones by log-prob per generated token (EOS counted).
// Ties go to the hypothesis created first, then to the lower token id.
template <typename State, typename Advance>
DecodeResult beam_search(State start, Advance advance, TokenId bos, TokenId eos, std::size_t width,
                         std::size_t max_len) {
  if (width == 0) throw std::invalid_argument("beam_decode: width must be at least 1");
  if (max_len == 0) throw std::invalid_argument("beam_decode: max_len must be at least 1");
  struct Hyp {
    std::vector<TokenId> tokens;
    State state;
    std::vector<double> next;
    double log_prob;
    std::size_t id;
  };
  struct Finished {
    DecodeResult result;
    double normalized;
    std::size_t id;
  };
  std::size_t next_id = 0;
  std::vector<Hyp> live;
  {
    State s = std::move(start);
    std::vector<double> lp = advance(s, bos);
    live.push_back(Hyp{{}, std::move(s), std::move(lp), 0.0, next_id++});
  }
  std::vector<Finished> finished;
  for (std::size_t len = 1; len <= max_len && !live.empty() && finished.size() < width; ++len) {
    struct Cand {
      double score;
      std::size_t hyp;
      TokenId token;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < live.size(); ++h)
      for (std::size_t v = 0; v < live[h].next.size(); ++v)
        cands.push_back({live[h].log_prob + live[h].next[v], h, static_cast<TokenId>(v)});
    const std::size_t keep = std::min(width - finished.size(), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [&](const Cand& a, const Cand& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (live[a.hyp].id != live[b.hyp].id) return live[a.hyp].id < live[b.hyp].id;
                        return a.token < b.token;
                      });
    std::vector<Hyp> grown;
    for (std::size_t c = 0; c < keep; ++c) {
      const Cand& cand = cands[c];
      const Hyp& parent = live[cand.hyp];
      if (cand.token == eos) {
        DecodeResult r{parent.tokens, cand.score, true};
        finished.push_back({std::move(r), cand.score / static_cast<double>(len), next_id++});
        continue;
      }
      Hyp child{parent.tokens, parent.state, {}, cand.score, next_id++};
      child.tokens.push_back(cand.token);
      if (len < max_len) child.next = advance(child.state, cand.token);
      grown.push_back(std::move(child));
    }
    live = std::move(grown);
  }
  auto better = [](double a_score, std::size_t a_id, double b_score, std::size_t b_id) {
    return a_score != b_score ? a_score > b_score : a_id < b_id;
  };
  if (!finished.empty()) {
    const Finished* best = &finished[0];
    for (const auto& f : finished)
      if (better(f.normalized, f.id, best->normalized, best->id)) best = &f;
    return best->result;
  }
  const Hyp* best = nullptr;
  for (const auto& h : live) {
    const double norm = h.log_prob / static_cast<double>(h.tokens.size());
    if (!best || better(norm, h.id, best->log_prob / static_cast<double>(best->tokens.size()), best->id)) best = &h;
  }
  if (!best) return {};
  return DecodeResult{best->tokens, best->log_prob, false};
}

// Beam decoding against nugget memory with the cached incremental decoder.
DecodeResult beam_decode(const NuggetModel& model, const NuggetSet& nuggets, std::size_t width, std::size_t max_len);
DecodeResult greedy_decode(const NuggetModel& model, const NuggetSet& nuggets, std::size_t max_len);

// Sentence-level BLEU-4 with brevity penalty. Zero n-gram matches are
// replaced by epsilon; orders for which the candidate has no n-grams are
// left out of the geometric mean.
inline constexpr double kBleuEpsilon = 1e-9;

struct BleuStats {
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};

  BleuStats& operator+=(const BleuStats& other);
  double score() const;
};

BleuStats bleu_stats(std::span<const TokenId> candidate, std::span<const TokenId> reference);
double bleu(std::span<const TokenId> candidate, std::span<const TokenId> reference);

struct SweepRow {
  double ratio = 0.0;
  double mean_bleu = 0.0;    // token-weighted mean of sentence BLEU
  double corpus_bleu = 0.0;  // pooled n-gram counts
  double mean_nuggets = 0.0;
  std::size_t documents = 0;
  std::size_t tokens = 0;
};

// Encode, select at each ratio, beam-decode and score against the input.
std::vector<SweepRow> reconstruction_sweep(const NuggetModel& model, std::span<const double> ratios,
                                           std::span<const Document> docs, std::size_t beam_width = 5);

struct TokenStat {
  TokenId token = 0;
  std::string word;
  std::size_t corpus_count = 0;
  std::size_t nugget_count = 0;
  double corpus_freq = 0.0;
  double nugget_freq = 0.0;
};

struct TokenStatsReport {
  std::size_t documents = 0;
  std::size_t tokens = 0;
  std::size_t nuggets = 0;
  double ratio = 0.0;
  std::vector<TokenStat> rows;  // sorted by nugget_freq, then corpus_freq, then id

  // Relative frequencies of selected positions, binned by position / length.
  std::vector<double> position_histogram;
};

TokenStatsReport nugget_token_stats(const NuggetModel& model, std::span<const Document> docs, const Vocabulary& vocab,
                                    std::size_t position_bins = 10);

// g_i = p(y_i | y_<i, z_j) - p(y_i | y_<i) for every document token i, with
// the unconditional term taken against the null memory slot.
std::vector<double> probability_gain(const NuggetModel& model, const Document& doc, std::size_t nugget_index);
// Same, exposing every nugget at once.
std::vector<double> probability_gain_all(const NuggetModel& model, const Document& doc);

// Mean gain by token offset relative to the exposed nugget's position.
struct GainProfile {
  std::vector<int> offsets;
  std::vector<double> mean_gain;
  std::vector<std::size_t> counts;
  std::size_t documents = 0;
  std::size_t nuggets = 0;
  double mean_single = 0.0;  // mean gain over all (nugget, token) pairs
  double mean_all = 0.0;     // mean gain with all nuggets exposed
};

GainProfile probability_gain_profile(const NuggetModel& model, std::span<const Document> docs, int radius = 10);

// Machine-readable outputs.
std::string sweep_csv(std::span<const SweepRow> rows);
nlohmann::json sweep_json(std::span<const SweepRow> rows);
std::string token_stats_csv(const TokenStatsReport& report, std::size_t top = 0);
nlohmann::json token_stats_json(const TokenStatsReport& report, std::size_t top = 20);
std::string gain_profile_csv(const GainProfile& profile);
nlohmann::json gain_profile_json(const GainProfile& profile);

// Minimal SVG charts.
std::string svg_line_chart(std::span<const double> xs, std::span<const double> ys, const std::string& title,
                           const std::string& x_label, const std::string& y_label);
std::string svg_bar_chart(std::span<const std::string> labels, std::span<const double> a, std::span<const double> b,
                          const std::string& title, const std::string& a_label, const std::string& b_label);

}  // namespace nugget
