#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "nugget/tensor.hpp"

namespace nugget {

using TokenId = std::int32_t;

// Row-major boolean mask; true marks a position that must not be attended.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> blocked;

  static AttentionMask causal(std::size_t n);
  bool is_blocked(std::size_t r, std::size_t c) const { return blocked[r * cols + c] != 0; }
};

// Differentiable primitives.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x: m x n, bias: n values broadcast over every row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
Tensor sum(const Tensor& a);
Tensor transpose(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& x);
// Gathers rows of a 2-D table; also serves as the row selector for nuggets.
Tensor embedding_lookup(const Tensor& table, std::span<const TokenId> ids);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
// Gathers elements of a rank-1 tensor.
Tensor gather(const Tensor& v, std::span<const std::size_t> positions);
// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy_nll(const Tensor& logits, std::span<const TokenId> targets);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor softmax_rows(const Tensor& logits, const AttentionMask* mask = nullptr);
Tensor softmax_with_bias(const Tensor& logits, const Tensor* bias = nullptr,
                         const AttentionMask* mask = nullptr);

// Non-differentiable selection: indices of the k largest scores in ascending
// index order, ties resolved toward the lower index.
std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k);

// Numerically stable log-softmax of one row, outside the graph.
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace nugget
