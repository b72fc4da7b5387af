#pragma once

#include <functional>
#include <span>
#include <vector>

#include "nugget/data.hpp"
#include "nugget/nugget.hpp"

namespace nugget {

// Row-major vector sets: `rows` vectors of width `dim`.
struct VectorSet {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  static VectorSet from_tensor(const Tensor& t);
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

double cosine(std::span<const double> a, std::span<const double> b);

// (1/I) sum_i max_j cos(q_i, d_j); the query side is averaged.
double maxsim_mean(const VectorSet& query, const VectorSet& doc);
// Sum over query vectors of the best cosine match (late-interaction reference).
double maxsim_max(const VectorSet& query, const VectorSet& doc);
// Cosine between the mean vectors of both sets.
double mean_pool_cosine(const VectorSet& query, const VectorSet& doc);

struct Ranking {
  std::vector<std::size_t> order;  // candidate indices, best first
  std::size_t gold_rank = 0;       // 1-based
};

// Stable descending sort of the scores; equal scores keep candidate order.
Ranking rank_candidates(std::span<const double> scores, std::size_t gold_index);

double mrr(std::span<const std::size_t> ranks);

enum class SimilarityScorer { nugget_maxsim_mean, nugget_maxsim_max, mean_pool };

SimilarityScorer similarity_scorer_from_string(const std::string& name);
std::string to_string(SimilarityScorer scorer);

// Nugget vectors of a document, or its last-layer token states for pooling.
VectorSet document_vectors(const NuggetModel& model, const Document& doc, SimilarityScorer scorer);

struct RankedExample {
  std::size_t example = 0;
  std::size_t gold_index = 0;
  std::size_t gold_rank = 0;
  std::vector<double> scores;
};

std::vector<RankedExample> evaluate_ranking(const NuggetModel& model, std::span<const RankingExample> examples,
                                            SimilarityScorer scorer);

}  // namespace nugget
