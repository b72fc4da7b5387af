#include "nugget/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace nugget {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using detail::Node;

[[maybe_unused]] ConstMap as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MutMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tensor make_result(Shape shape, std::vector<double> value, const char* op, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->parents.push_back(t.node_ptr());
    node->backward = std::move(bw);
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(Shape shape, std::vector<double> value, const char* op, std::span<const Tensor> inputs,
                     std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->parents.push_back(t.node_ptr());
    node->backward = std::move(bw);
  }
  return Tensor(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

}  // namespace

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask mask;
  mask.rows = n;
  mask.cols = n;
  mask.blocked.assign(n * n, 0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = r + 1; c < n; ++c) mask.blocked[r * n + c] = 1;
  return mask;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() > 2 || b.rank() > 2 || a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(a.node()->value, m, k) * as_matrix(b.node()->value, k, n);
  return make_result(matrix_shape(m, n), std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
    auto g = as_matrix(self.grad, m, n);
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad)
      as_matrix(pa.grad_buffer(), m, k).noalias() += g * as_matrix(pb.value, k, n).transpose();
    if (pb.requires_grad)
      as_matrix(pb.grad_buffer(), k, n).noalias() += as_matrix(pa.value, m, k).transpose() * g;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [](Node& self) {
    for (int p = 0; p < 2; ++p) {
      Node& parent = *self.parents[p];
      if (!parent.requires_grad) continue;
      auto& g = parent.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [](Node& self) {
    for (int p = 0; p < 2; ++p) {
      Node& parent = *self.parents[p];
      if (!parent.requires_grad) continue;
      const double sign = p == 0 ? 1.0 : -1.0;
      auto& g = parent.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.node()->value);
  for (auto& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), "scale", {a}, [factor](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_row_bias");
  require_defined(bias, "add_row_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != n || bias.rank() > 1)
    throw DimensionError("add_row_bias: bias " + shape_string(bias.shape()) + " not broadcastable to " +
                         shape_string(x.shape()));
  std::vector<double> out(x.node()->value);
  const auto& b = bias.node()->value;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += b[c];
  return make_result(x.shape(), std::move(out), "add_row_bias", {x, bias}, [m, n](Node& self) {
    Node& px = *self.parents[0];
    Node& pb = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
    }
  });
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double total = 0.0;
  for (double v : a.node()->value) total += v;
  return make_result({}, {total}, "sum", {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  as_matrix(out, n, m) = as_matrix(a.node()->value, m, n).transpose();
  return make_result(matrix_shape(n, m), std::move(out), "transpose", {a}, [m, n](Node& self) {
    as_matrix(self.parents[0]->grad_buffer(), m, n) += as_matrix(self.grad, n, m).transpose();
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n)
    throw DimensionError("layer_norm: gain/shift must have " + std::to_string(n) + " values, got " +
                         shape_string(gamma.shape()) + " and " + shape_string(beta.shape()));
  const auto& xv = x.node()->value;
  const auto& gv = gamma.node()->value;
  const auto& bv = beta.node()->value;
  std::vector<double> out(m * n);
  auto normalized = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mean) * is;
      (*normalized)[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  return make_result(x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
                     [m, n, normalized, inv_std](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const auto& gy = self.grad;
                       const auto& h = *normalized;
                       if (pg.requires_grad) {
                         auto& g = pg.grad_buffer();
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) g[c] += gy[r * n + c] * h[r * n + c];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.grad_buffer();
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) g[c] += gy[r * n + c];
                       }
                       if (px.requires_grad) {
                         auto& g = px.grad_buffer();
                         const auto& gamma_v = pg.value;
                         std::vector<double> dh(n);
                         for (std::size_t r = 0; r < m; ++r) {
                           double mean_dh = 0.0, mean_dh_h = 0.0;
                           for (std::size_t c = 0; c < n; ++c) {
                             dh[c] = gy[r * n + c] * gamma_v[c];
                             mean_dh += dh[c];
                             mean_dh_h += dh[c] * h[r * n + c];
                           }
                           mean_dh /= static_cast<double>(n);
                           mean_dh_h /= static_cast<double>(n);
                           const double is = (*inv_std)[r];
                           for (std::size_t c = 0; c < n; ++c)
                             g[r * n + c] += is * (dh[c] - mean_dh - h[r * n + c] * mean_dh_h);
                         }
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
  return make_result(x.shape(), std::move(out), "gelu", {x}, [](Node& self) {
    Node& px = *self.parents[0];
    auto& g = px.grad_buffer();
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = px.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const TokenId> ids) {
  require_defined(table, "embedding_lookup");
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id sequence");
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(vocab) + " rows");
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  (void)d;
  return gather_rows(table, rows);
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_defined(x, "gather_rows");
  if (rows.empty()) throw DimensionError("gather_rows: empty selection");
  const std::size_t n = x.cols(), total = x.rows();
  std::vector<double> out(rows.size() * n);
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= total)
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                              std::to_string(total));
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(rows[i] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  std::vector<std::size_t> picked(rows.begin(), rows.end());
  return make_result(matrix_shape(rows.size(), n), std::move(out), "gather_rows", {x},
                     [picked = std::move(picked), n](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < picked.size(); ++i)
                         for (std::size_t c = 0; c < n; ++c) g[picked[i] * n + c] += self.grad[i * n + c];
                     });
}

Tensor gather(const Tensor& v, std::span<const std::size_t> positions) {
  require_defined(v, "gather");
  if (v.rank() != 1) throw DimensionError("gather expects rank 1, got " + shape_string(v.shape()));
  if (positions.empty()) throw DimensionError("gather: empty selection");
  std::vector<double> out(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= v.numel()) throw std::out_of_range("gather: position outside tensor");
    out[i] = v.node()->value[positions[i]];
  }
  std::vector<std::size_t> picked(positions.begin(), positions.end());
  return make_result({positions.size()}, std::move(out), "gather", {v}, [picked = std::move(picked)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < picked.size(); ++i) g[picked[i]] += self.grad[i];
  });
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double total = 0.0;
  for (double v : logits) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

Tensor cross_entropy_nll(const Tensor& logits, std::span<const TokenId> targets) {
  require_defined(logits, "cross_entropy_nll");
  const std::size_t t = logits.rows(), v = logits.cols();
  if (targets.size() != t)
    throw DimensionError("cross_entropy_nll: " + std::to_string(t) + " logit rows but " +
                         std::to_string(targets.size()) + " targets");
  const auto& lv = logits.node()->value;
  auto probs = std::make_shared<std::vector<double>>(t * v);
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t r = 0; r < t; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= v)
      throw std::out_of_range("cross_entropy_nll: target id " + std::to_string(tgt[r]) + " outside vocab of " +
                              std::to_string(v));
    auto ls = log_softmax(std::span<const double>(lv.data() + r * v, v));
    total -= ls[static_cast<std::size_t>(tgt[r])];
    for (std::size_t c = 0; c < v; ++c) (*probs)[r * v + c] = std::exp(ls[c]);
  }
  const double inv_t = 1.0 / static_cast<double>(t);
  return make_result({}, {total * inv_t}, "cross_entropy_nll", {logits},
                     [probs, tgt = std::move(tgt), t, v, inv_t](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       const double up = self.grad[0] * inv_t;
                       for (std::size_t r = 0; r < t; ++r) {
                         for (std::size_t c = 0; c < v; ++c) g[r * v + c] += up * (*probs)[r * v + c];
                         g[r * v + static_cast<std::size_t>(tgt[r])] -= up;
                       }
                     });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != n)
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    offsets.push_back(total);
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * n);
  for (const auto& p : parts) out.insert(out.end(), p.node()->value.begin(), p.node()->value.end());
  return make_result_n(matrix_shape(total, n), std::move(out), "concat_rows", parts,
                       [offsets = std::move(offsets), n](Node& self) {
                         for (std::size_t p = 0; p < self.parents.size(); ++p) {
                           Node& parent = *self.parents[p];
                           if (!parent.requires_grad) continue;
                           auto& g = parent.grad_buffer();
                           const std::size_t base = offsets[p] * n;
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[base + i];
                         }
                       });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets, widths;
  for (const auto& p : parts) {
    if (p.rows() != m)
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    offsets.push_back(total);
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].node()->value;
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * widths[p]), widths[p],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offsets[p]));
  }
  return make_result_n(matrix_shape(m, total), std::move(out), "concat_cols", parts,
                       [offsets = std::move(offsets), widths = std::move(widths), m, total](Node& self) {
                         for (std::size_t p = 0; p < self.parents.size(); ++p) {
                           Node& parent = *self.parents[p];
                           if (!parent.requires_grad) continue;
                           auto& g = parent.grad_buffer();
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t c = 0; c < widths[p]; ++c)
                               g[r * widths[p] + c] += self.grad[r * total + offsets[p] + c];
                         }
                       });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_defined(x, "slice_rows");
  if (begin >= end || end > x.rows())
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_string(x.shape()));
  const std::size_t n = x.cols();
  const auto& v = x.node()->value;
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          v.begin() + static_cast<std::ptrdiff_t>(end * n));
  return make_result(matrix_shape(end - begin, n), std::move(out), "slice_rows", {x}, [begin, n](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_defined(x, "slice_cols");
  if (begin >= end || end > x.cols())
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_string(x.shape()));
  const std::size_t m = x.rows(), n = x.cols(), w = end - begin;
  const auto& v = x.node()->value;
  std::vector<double> out(m * w);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * n + begin), w,
                out.begin() + static_cast<std::ptrdiff_t>(r * w));
  return make_result(matrix_shape(m, w), std::move(out), "slice_cols", {x}, [m, n, w, begin](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c) g[r * n + begin + c] += self.grad[r * w + c];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_string(x.shape()) + " cannot become " + shape_string(shape));
  return make_result(std::move(shape), x.node()->value, "reshape", {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor softmax_rows(const Tensor& logits, const AttentionMask* mask) {
  require_defined(logits, "softmax_rows");
  const std::size_t m = logits.rows(), n = logits.cols();
  if (mask && (mask->rows != m || mask->cols != n))
    throw DimensionError("softmax_rows: mask " + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                         " does not match " + shape_string(logits.shape()));
  const auto& lv = logits.node()->value;
  std::vector<double> out(m * n, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c)
      if (!mask || !mask->is_blocked(r, c)) mx = std::max(mx, lv[r * n + c]);
    if (mx == -std::numeric_limits<double>::infinity())
      throw std::domain_error("softmax_rows: row " + std::to_string(r) + " has no valid attention target");
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (mask && mask->is_blocked(r, c)) continue;
      out[r * n + c] = std::exp(lv[r * n + c] - mx);
      total += out[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= total;
  }
  return make_result(logits.shape(), std::move(out), "softmax_rows", {logits}, [m, n](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& p = self.value;
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += self.grad[r * n + c] * p[r * n + c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += p[r * n + c] * (self.grad[r * n + c] - dot);
    }
  });
}

Tensor softmax_with_bias(const Tensor& logits, const Tensor* bias, const AttentionMask* mask) {
  if (bias) return softmax_rows(add_row_bias(logits, *bias), mask);
  return softmax_rows(logits, mask);
}

std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size())
    throw std::out_of_range("topk_indices: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(scores.size()) + "]");
  for (double s : scores)
    if (std::isnan(s)) throw std::domain_error("topk_indices: NaN score");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace nugget
