#include "nugget/inference.hpp"

#include <cstdio>
#include <iomanip>
#include <map>
#include <sstream>

namespace nugget {

namespace {

std::vector<double> log_probs(std::span<const double> logits) { return log_softmax(logits); }

// Teacher-forced probability of each output token.
std::vector<double> target_probs(const Tensor& logits, std::span<const TokenId> outputs) {
  const std::size_t v = logits.cols();
  std::vector<double> out(outputs.size());
  for (std::size_t r = 0; r < outputs.size(); ++r) {
    auto lp = log_softmax(logits.data().subspan(r * v, v));
    out[r] = std::exp(lp[static_cast<std::size_t>(outputs[r])]);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

DecodeResult beam_decode(const NuggetModel& model, const NuggetSet& nuggets, std::size_t width, std::size_t max_len) {
  NoGradGuard no_grad;
  const Decoder& decoder = model.decoder();
  max_len = std::min(max_len, model.config().max_len);
  DecoderState start = decoder.start(nuggets.vectors, model.memory_bias(nuggets, false));
  auto advance = [&decoder](DecoderState& state, TokenId token) { return log_probs(decoder.step(state, token)); };
  return beam_search(std::move(start), advance, kBos, kEos, width, max_len);
}

DecodeResult greedy_decode(const NuggetModel& model, const NuggetSet& nuggets, std::size_t max_len) {
  NoGradGuard no_grad;
  const Decoder& decoder = model.decoder();
  max_len = std::min(max_len, model.config().max_len);
  DecoderState state = decoder.start(nuggets.vectors, model.memory_bias(nuggets, false));
  DecodeResult out;
  TokenId token = kBos;
  for (std::size_t len = 1; len <= max_len; ++len) {
    auto lp = log_probs(decoder.step(state, token));
    const auto best = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    out.log_prob += lp[static_cast<std::size_t>(best)];
    if (best == kEos) {
      out.finished = true;
      return out;
    }
    out.tokens.push_back(best);
    token = best;
    if (len == max_len) break;
  }
  return out;
}

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  candidate_length += other.candidate_length;
  reference_length += other.reference_length;
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += other.matches[n];
    totals[n] += other.totals[n];
  }
  return *this;
}

double BleuStats::score() const {
  if (candidate_length == 0) return 0.0;
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (totals[n] == 0) continue;
    const double m = std::max(static_cast<double>(matches[n]), kBleuEpsilon);
    log_sum += std::log(m / static_cast<double>(totals[n]));
    ++orders;
  }
  const double c = static_cast<double>(candidate_length), r = static_cast<double>(reference_length);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(orders));
}

BleuStats bleu_stats(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
  BleuStats stats;
  stats.candidate_length = candidate.size();
  stats.reference_length = reference.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<TokenId>, std::size_t> ref_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i)
      ++ref_counts[std::vector<TokenId>(reference.begin() + i, reference.begin() + i + n)];
    std::map<std::vector<TokenId>, std::size_t> cand_counts;
    for (std::size_t i = 0; i + n <= candidate.size(); ++i)
      ++cand_counts[std::vector<TokenId>(candidate.begin() + i, candidate.begin() + i + n)];
    for (const auto& [gram, count] : cand_counts) {
      auto it = ref_counts.find(gram);
      stats.matches[n - 1] += std::min(count, it == ref_counts.end() ? 0 : it->second);
      stats.totals[n - 1] += count;
    }
  }
  return stats;
}

double bleu(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
  return bleu_stats(candidate, reference).score();
}

std::vector<SweepRow> reconstruction_sweep(const NuggetModel& model, std::span<const double> ratios,
                                           std::span<const Document> docs, std::size_t beam_width) {
  if (docs.empty()) throw std::invalid_argument("reconstruction_sweep: no documents");
  NoGradGuard no_grad;
  std::vector<SweepRow> rows;
  for (double r : ratios) {
    check_ratio(r, "ratios");
    SweepRow row;
    row.ratio = r;
    BleuStats pooled;
    double weighted = 0.0, nuggets = 0.0;
    for (const auto& doc : docs) {
      const NuggetSet set = model.generate(doc.tokens, &doc, r);
      const DecodeResult out = beam_decode(model, set, beam_width, doc.tokens.size() + 8);
      const BleuStats stats = bleu_stats(out.tokens, doc.tokens);
      pooled += stats;
      weighted += stats.score() * static_cast<double>(doc.tokens.size());
      nuggets += static_cast<double>(set.k);
      row.tokens += doc.tokens.size();
    }
    row.documents = docs.size();
    row.mean_bleu = weighted / static_cast<double>(row.tokens);
    row.corpus_bleu = pooled.score();
    row.mean_nuggets = nuggets / static_cast<double>(docs.size());
    rows.push_back(row);
  }
  return rows;
}

TokenStatsReport nugget_token_stats(const NuggetModel& model, std::span<const Document> docs, const Vocabulary& vocab,
                                    std::size_t position_bins) {
  if (docs.empty()) throw std::invalid_argument("nugget_token_stats: no documents");
  if (position_bins == 0) throw std::invalid_argument("nugget_token_stats: need at least one position bin");
  NoGradGuard no_grad;
  TokenStatsReport report;
  report.ratio = model.config().ratio;
  report.position_histogram.assign(position_bins, 0.0);
  std::map<TokenId, std::pair<std::size_t, std::size_t>> counts;
  for (const auto& doc : docs) {
    const NuggetSet set = model.generate(doc.tokens, &doc);
    for (TokenId t : doc.tokens) ++counts[t].first;
    const double n = static_cast<double>(doc.tokens.size());
    for (std::size_t i : set.indices) {
      ++counts[doc.tokens[i]].second;
      const auto bin = std::min(position_bins - 1, static_cast<std::size_t>(static_cast<double>(i) / n * position_bins));
      report.position_histogram[bin] += 1.0;
    }
    report.tokens += doc.tokens.size();
    report.nuggets += set.k;
  }
  report.documents = docs.size();
  for (double& h : report.position_histogram) h /= static_cast<double>(report.nuggets);
  for (const auto& [token, c] : counts) {
    TokenStat row;
    row.token = token;
    row.word = vocab.word(token);
    row.corpus_count = c.first;
    row.nugget_count = c.second;
    row.corpus_freq = static_cast<double>(c.first) / static_cast<double>(report.tokens);
    row.nugget_freq = static_cast<double>(c.second) / static_cast<double>(report.nuggets);
    report.rows.push_back(row);
  }
  std::stable_sort(report.rows.begin(), report.rows.end(), [](const TokenStat& a, const TokenStat& b) {
    if (a.nugget_freq != b.nugget_freq) return a.nugget_freq > b.nugget_freq;
    return a.corpus_freq > b.corpus_freq;
  });
  return report;
}

namespace {

std::vector<double> gain_against(const NuggetModel& model, const Document& doc, const Tensor& memory,
                                 const Tensor* bias) {
  const auto inputs = decoder_inputs_for(doc.tokens);
  const auto outputs = decoder_outputs_for(doc.tokens);
  auto cond = target_probs(model.decoder().decode(inputs, memory, bias), outputs);
  auto uncond = target_probs(model.decode_unconditional(inputs), outputs);
  std::vector<double> gain(doc.tokens.size());
  for (std::size_t i = 0; i < gain.size(); ++i) gain[i] = cond[i] - uncond[i];
  return gain;
}

}  // namespace

std::vector<double> probability_gain(const NuggetModel& model, const Document& doc, std::size_t nugget_index) {
  NoGradGuard no_grad;
  const NuggetSet set = model.generate(doc.tokens, &doc);
  if (nugget_index >= set.k)
    throw std::out_of_range("probability_gain: nugget " + std::to_string(nugget_index) + " of " +
                            std::to_string(set.k));
  const Tensor memory = slice_rows(set.vectors, nugget_index, nugget_index + 1);
  Tensor bias;
  if (const Tensor* full = model.memory_bias(set, false)) {
    const std::size_t pos[1] = {nugget_index};
    bias = gather(*full, pos);
  }
  return gain_against(model, doc, memory, bias.defined() ? &bias : nullptr);
}

std::vector<double> probability_gain_all(const NuggetModel& model, const Document& doc) {
  NoGradGuard no_grad;
  const NuggetSet set = model.generate(doc.tokens, &doc);
  return gain_against(model, doc, set.vectors, model.memory_bias(set, false));
}

GainProfile probability_gain_profile(const NuggetModel& model, std::span<const Document> docs, int radius) {
  if (radius < 0) throw std::invalid_argument("probability_gain_profile: radius must be non-negative");
  NoGradGuard no_grad;
  GainProfile profile;
  const std::size_t width = static_cast<std::size_t>(2 * radius + 1);
  profile.mean_gain.assign(width, 0.0);
  profile.counts.assign(width, 0);
  for (int o = -radius; o <= radius; ++o) profile.offsets.push_back(o);
  double single_sum = 0.0, all_sum = 0.0;
  std::size_t single_count = 0, all_count = 0;
  for (const auto& doc : docs) {
    const NuggetSet set = model.generate(doc.tokens, &doc);
    for (std::size_t j = 0; j < set.k; ++j) {
      const auto gain = probability_gain(model, doc, j);
      for (std::size_t i = 0; i < gain.size(); ++i) {
        single_sum += gain[i];
        ++single_count;
        const long offset = static_cast<long>(i) - static_cast<long>(set.indices[j]);
        if (offset < -radius || offset > radius) continue;
        const auto slot = static_cast<std::size_t>(offset + radius);
        profile.mean_gain[slot] += gain[i];
        ++profile.counts[slot];
      }
    }
    for (double g : probability_gain_all(model, doc)) {
      all_sum += g;
      ++all_count;
    }
    profile.nuggets += set.k;
    ++profile.documents;
  }
  for (std::size_t s = 0; s < width; ++s)
    if (profile.counts[s]) profile.mean_gain[s] /= static_cast<double>(profile.counts[s]);
  profile.mean_single = single_count ? single_sum / static_cast<double>(single_count) : 0.0;
  profile.mean_all = all_count ? all_sum / static_cast<double>(all_count) : 0.0;
  return profile;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "ratio,mean_bleu,corpus_bleu,mean_nuggets,documents,tokens\n";
  for (const auto& r : rows)
    out << fmt(r.ratio) << ',' << fmt(r.mean_bleu) << ',' << fmt(r.corpus_bleu) << ',' << fmt(r.mean_nuggets) << ','
        << r.documents << ',' << r.tokens << '\n';
  return out.str();
}

nlohmann::json sweep_json(std::span<const SweepRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"ratio", r.ratio},
                   {"mean_bleu", r.mean_bleu},
                   {"corpus_bleu", r.corpus_bleu},
                   {"mean_nuggets", r.mean_nuggets},
                   {"documents", r.documents},
                   {"tokens", r.tokens}});
  return out;
}

std::string token_stats_csv(const TokenStatsReport& report, std::size_t top) {
  std::ostringstream out;
  out << "token,word,corpus_count,nugget_count,corpus_freq,nugget_freq\n";
  const std::size_t n = top ? std::min(top, report.rows.size()) : report.rows.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = report.rows[i];
    out << r.token << ',' << '"' << r.word << '"' << ',' << r.corpus_count << ',' << r.nugget_count << ','
        << fmt(r.corpus_freq) << ',' << fmt(r.nugget_freq) << '\n';
  }
  return out.str();
}

nlohmann::json token_stats_json(const TokenStatsReport& report, std::size_t top) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < std::min(top, report.rows.size()); ++i) {
    const auto& r = report.rows[i];
    rows.push_back({{"word", r.word},
                    {"corpus_freq", r.corpus_freq},
                    {"nugget_freq", r.nugget_freq},
                    {"lift", r.corpus_freq > 0 ? r.nugget_freq / r.corpus_freq : 0.0}});
  }
  return {{"documents", report.documents},
          {"tokens", report.tokens},
          {"nuggets", report.nuggets},
          {"ratio", report.ratio},
          {"top", rows},
          {"position_histogram", report.position_histogram}};
}

std::string gain_profile_csv(const GainProfile& profile) {
  std::ostringstream out;
  out << "offset,mean_gain,count\n";
  for (std::size_t i = 0; i < profile.offsets.size(); ++i)
    out << profile.offsets[i] << ',' << fmt(profile.mean_gain[i]) << ',' << profile.counts[i] << '\n';
  return out.str();
}

nlohmann::json gain_profile_json(const GainProfile& profile) {
  return {{"documents", profile.documents},
          {"nuggets", profile.nuggets},
          {"mean_single", profile.mean_single},
          {"mean_all", profile.mean_all},
          {"offsets", profile.offsets},
          {"mean_gain", profile.mean_gain},
          {"counts", profile.counts}};
}

namespace {

constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string frame(const std::string& title, const std::string& x_label, const std::string& y_label, double y_lo,
                  double y_hi) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
    << "</text>\n"
    << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\""
    << kH - kBottom << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
    << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
    << escape(x_label) << "</text>\n"
    << "<text x=\"14\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 14 " << kH / 2
    << ")\" text-anchor=\"middle\" font-size=\"12\">" << escape(y_label) << "</text>\n"
    << "<text x=\"" << kLeft - 4 << "\" y=\"" << kTop + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << y_hi
    << "</text>\n"
    << "<text x=\"" << kLeft - 4 << "\" y=\"" << kH - kBottom << "\" text-anchor=\"end\" font-size=\"10\">" << y_lo
    << "</text>\n";
  return s.str();
}

}  // namespace

std::string svg_line_chart(std::span<const double> xs, std::span<const double> ys, const std::string& title,
                           const std::string& x_label, const std::string& y_label) {
  if (xs.size() != ys.size() || xs.empty()) throw std::invalid_argument("svg_line_chart: need matching non-empty series");
  auto [x_lo, x_hi] = std::minmax_element(xs.begin(), xs.end());
  auto [y_lo_it, y_hi_it] = std::minmax_element(ys.begin(), ys.end());
  double y_lo = std::min(0.0, *y_lo_it), y_hi = std::max(*y_hi_it, y_lo + 1e-12);
  const double x_span = std::max(*x_hi - *x_lo, 1e-12);
  std::ostringstream s;
  s << frame(title, x_label, y_label, y_lo, y_hi) << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double px = kLeft + (xs[i] - *x_lo) / x_span * (kW - kLeft - kRight);
    const double py = kH - kBottom - (ys[i] - y_lo) / (y_hi - y_lo) * (kH - kTop - kBottom);
    s << px << ',' << py << ' ';
  }
  s << "\"/>\n</svg>\n";
  return s.str();
}

std::string svg_bar_chart(std::span<const std::string> labels, std::span<const double> a, std::span<const double> b,
                          const std::string& title, const std::string& a_label, const std::string& b_label) {
  if (labels.size() != a.size() || a.size() != b.size() || labels.empty())
    throw std::invalid_argument("svg_bar_chart: need matching non-empty series");
  double y_hi = 1e-12;
  for (std::size_t i = 0; i < a.size(); ++i) y_hi = std::max({y_hi, a[i], b[i]});
  const double slot = (kW - kLeft - kRight) / static_cast<double>(labels.size());
  const double plot_h = kH - kTop - kBottom;
  std::ostringstream s;
  s << frame(title, a_label + " (blue) vs " + b_label + " (orange)", "frequency", 0.0, y_hi);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double x = kLeft + slot * static_cast<double>(i);
    const double ha = a[i] / y_hi * plot_h, hb = b[i] / y_hi * plot_h;
    s << "<rect x=\"" << x + slot * 0.1 << "\" y=\"" << kH - kBottom - ha << "\" width=\"" << slot * 0.4
      << "\" height=\"" << ha << "\" fill=\"steelblue\"/>\n"
      << "<rect x=\"" << x + slot * 0.5 << "\" y=\"" << kH - kBottom - hb << "\" width=\"" << slot * 0.4
      << "\" height=\"" << hb << "\" fill=\"darkorange\"/>\n"
      << "<text x=\"" << x + slot / 2 << "\" y=\"" << kH - kBottom + 14
      << "\" text-anchor=\"middle\" font-size=\"10\">" << escape(labels[i]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace nugget
