#include "nugget/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nugget {

namespace {

double norm_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void check_set(const VectorSet& s, const char* side) {
  if (s.rows == 0 || s.dim == 0) throw std::invalid_argument(std::string("similarity: empty ") + side + " vector set");
  if (s.values.size() != s.rows * s.dim) throw DimensionError(std::string("similarity: malformed ") + side + " set");
}

void check_pair(const VectorSet& q, const VectorSet& d) {
  check_set(q, "query");
  check_set(d, "document");
  if (q.dim != d.dim)
    throw DimensionError("similarity: width " + std::to_string(q.dim) + " vs " + std::to_string(d.dim));
}

// Best cosine of every query row against the document rows.
std::vector<double> best_matches(const VectorSet& q, const VectorSet& d) {
  check_pair(q, d);
  std::vector<double> d_norms(d.rows);
  for (std::size_t j = 0; j < d.rows; ++j) {
    d_norms[j] = norm_of(d.row(j));
    if (d_norms[j] == 0.0) throw std::domain_error("similarity: zero-norm document vector");
  }
  std::vector<double> best(q.rows);
  for (std::size_t i = 0; i < q.rows; ++i) {
    const auto qi = q.row(i);
    const double qn = norm_of(qi);
    if (qn == 0.0) throw std::domain_error("similarity: zero-norm query vector");
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d.rows; ++j) {
      const auto dj = d.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < q.dim; ++c) dot += qi[c] * dj[c];
      top = std::max(top, dot / (qn * d_norms[j]));
    }
    best[i] = top;
  }
  return best;
}

}  // namespace

VectorSet VectorSet::from_tensor(const Tensor& t) {
  return VectorSet{t.rows(), t.cols(), std::vector<double>(t.data().begin(), t.data().end())};
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine: length mismatch");
  const double na = norm_of(a), nb = norm_of(b);
  if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine: zero-norm vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / (na * nb);
}

double maxsim_mean(const VectorSet& query, const VectorSet& doc) {
  const auto best = best_matches(query, doc);
  return std::accumulate(best.begin(), best.end(), 0.0) / static_cast<double>(best.size());
}

double maxsim_max(const VectorSet& query, const VectorSet& doc) {
  const auto best = best_matches(query, doc);
  return std::accumulate(best.begin(), best.end(), 0.0);
}

double mean_pool_cosine(const VectorSet& query, const VectorSet& doc) {
  check_pair(query, doc);
  auto mean = [](const VectorSet& s) {
    std::vector<double> m(s.dim, 0.0);
    for (std::size_t i = 0; i < s.rows; ++i)
      for (std::size_t c = 0; c < s.dim; ++c) m[c] += s.values[i * s.dim + c];
    for (double& x : m) x /= static_cast<double>(s.rows);
    return m;
  };
  return cosine(mean(query), mean(doc));
}

Ranking rank_candidates(std::span<const double> scores, std::size_t gold_index) {
  if (gold_index >= scores.size())
    throw std::out_of_range("rank_candidates: gold index " + std::to_string(gold_index) + " of " +
                            std::to_string(scores.size()));
  Ranking r;
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  r.gold_rank = static_cast<std::size_t>(std::find(r.order.begin(), r.order.end(), gold_index) - r.order.begin()) + 1;
  return r;
}

double mrr(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw std::invalid_argument("mrr: no ranks");
  double s = 0.0;
  for (std::size_t r : ranks) {
    if (r == 0) throw std::invalid_argument("mrr: ranks are 1-based");
    s += 1.0 / static_cast<double>(r);
  }
  return s / static_cast<double>(ranks.size());
}

SimilarityScorer similarity_scorer_from_string(const std::string& name) {
  if (name == "maxsim-mean") return SimilarityScorer::nugget_maxsim_mean;
  if (name == "maxsim-max") return SimilarityScorer::nugget_maxsim_max;
  if (name == "mean-pool") return SimilarityScorer::mean_pool;
  throw ConfigError("scorer", "expected maxsim-mean, maxsim-max or mean-pool, got '" + name + "'");
}

std::string to_string(SimilarityScorer scorer) {
  switch (scorer) {
    case SimilarityScorer::nugget_maxsim_mean: return "maxsim-mean";
    case SimilarityScorer::nugget_maxsim_max: return "maxsim-max";
    case SimilarityScorer::mean_pool: return "mean-pool";
  }
  return "?";
}

VectorSet document_vectors(const NuggetModel& model, const Document& doc, SimilarityScorer scorer) {
  NoGradGuard no_grad;
  if (scorer == SimilarityScorer::mean_pool) {
    const auto states = model.encoder().encode(doc.tokens);
    return VectorSet::from_tensor(states.back());
  }
  return VectorSet::from_tensor(model.generate(doc.tokens, &doc).vectors);
}

std::vector<RankedExample> evaluate_ranking(const NuggetModel& model, std::span<const RankingExample> examples,
                                            SimilarityScorer scorer) {
  std::vector<RankedExample> out;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const auto& ex = examples[e];
    const VectorSet q = document_vectors(model, ex.query, scorer);
    RankedExample row;
    row.example = e;
    row.gold_index = ex.gold_index;
    for (const auto& cand : ex.candidates) {
      const VectorSet d = document_vectors(model, cand, scorer);
      switch (scorer) {
        case SimilarityScorer::nugget_maxsim_mean: row.scores.push_back(maxsim_mean(q, d)); break;
        case SimilarityScorer::nugget_maxsim_max: row.scores.push_back(maxsim_max(q, d)); break;
        case SimilarityScorer::mean_pool: row.scores.push_back(mean_pool_cosine(q, d)); break;
      }
    }
    row.gold_rank = rank_candidates(row.scores, ex.gold_index).gold_rank;
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace nugget
