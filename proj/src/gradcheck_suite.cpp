#include <cmath>

#include "nugget/gradcheck.hpp"
#include "nugget/ops.hpp"
#include "nugget/rng.hpp"
#include "nugget/transformer.hpp"

namespace nugget {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

// Scalar readout sum(out * w) with a fixed random weight.
Tensor readout(const Tensor& out, const Tensor& weight) { return sum(mul(out, weight)); }

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

}  // namespace

std::vector<PrimitiveCheck> check_primitives(std::size_t cases, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PrimitiveCheck> results;
  auto run = [&](const std::string& name, const std::function<double(Rng&)>& one_case) {
    PrimitiveCheck check{name, cases, 0.0};
    for (std::size_t c = 0; c < cases; ++c) check.max_relative_error = std::max(check.max_relative_error, one_case(rng));
    results.push_back(check);
  };
  auto unary = [&](const std::function<Tensor(const Tensor&)>& op) {
    return [op](Rng& r) {
      const std::size_t m = dim(r, 1, 5), n = dim(r, 1, 6);
      const Tensor w = random_tensor({m, n}, r);
      return gradcheck([&](const std::vector<Tensor>& in) { return readout(op(in[0]), w); },
                       {random_tensor({m, n}, r, -2.0, 2.0)})
          .max_relative_error;
    };
  };
  auto binary = [&](const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
    return [op](Rng& r) {
      const std::size_t m = dim(r, 1, 5), n = dim(r, 1, 6);
      const Tensor w = random_tensor({m, n}, r);
      return gradcheck([&](const std::vector<Tensor>& in) { return readout(op(in[0], in[1]), w); },
                       {random_tensor({m, n}, r), random_tensor({m, n}, r)})
          .max_relative_error;
    };
  };

  run("matmul", [](Rng& r) {
    const std::size_t m = dim(r, 1, 5), k = dim(r, 1, 5), n = dim(r, 1, 5);
    const Tensor w = random_tensor({m, n}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(matmul(in[0], in[1]), w); },
                     {random_tensor({m, k}, r), random_tensor({k, n}, r)})
        .max_relative_error;
  });
  run("add", binary([](const Tensor& a, const Tensor& b) { return add(a, b); }));
  run("sub", binary([](const Tensor& a, const Tensor& b) { return sub(a, b); }));
  run("mul", binary([](const Tensor& a, const Tensor& b) { return mul(a, b); }));
  run("scale", unary([](const Tensor& a) { return scale(a, -1.7); }));
  run("transpose", [](Rng& r) {
    const std::size_t m = dim(r, 1, 5), n = dim(r, 1, 6);
    const Tensor w = random_tensor({n, m}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(transpose(in[0]), w); },
                     {random_tensor({m, n}, r)})
        .max_relative_error;
  });
  run("gelu", unary([](const Tensor& a) { return gelu(a); }));
  run("softmax_rows", unary([](const Tensor& a) { return softmax_rows(a); }));
  run("sum", [](Rng& r) {
    const Tensor x = random_tensor({dim(r, 1, 5), dim(r, 1, 5)}, r);
    return gradcheck([](const std::vector<Tensor>& in) { return scale(sum(in[0]), 0.5); }, {x}).max_relative_error;
  });
  run("add_row_bias", [](Rng& r) {
    const std::size_t m = dim(r, 1, 5), n = dim(r, 1, 6);
    const Tensor w = random_tensor({m, n}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(add_row_bias(in[0], in[1]), w); },
                     {random_tensor({m, n}, r), random_tensor({n}, r)})
        .max_relative_error;
  });
  run("layer_norm", [](Rng& r) {
    const std::size_t m = dim(r, 1, 4), n = dim(r, 2, 8);
    const Tensor w = random_tensor({m, n}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(layer_norm(in[0], in[1], in[2]), w); },
                     {random_tensor({m, n}, r, -2.0, 2.0), random_tensor({n}, r, 0.5, 1.5), random_tensor({n}, r)})
        .max_relative_error;
  });
  run("embedding_lookup", [](Rng& r) {
    const std::size_t v = dim(r, 2, 6), d = dim(r, 1, 5), t = dim(r, 1, 7);
    std::vector<TokenId> ids(t);
    for (auto& id : ids) id = static_cast<TokenId>(r.below(v));
    const Tensor w = random_tensor({t, d}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(embedding_lookup(in[0], ids), w); },
                     {random_tensor({v, d}, r)})
        .max_relative_error;
  });
  run("gather_rows", [](Rng& r) {
    const std::size_t m = dim(r, 1, 6), d = dim(r, 1, 5), t = dim(r, 1, 7);
    std::vector<std::size_t> rows(t);
    for (auto& i : rows) i = r.below(m);
    const Tensor w = random_tensor({t, d}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(gather_rows(in[0], rows), w); },
                     {random_tensor({m, d}, r)})
        .max_relative_error;
  });
  run("gather", [](Rng& r) {
    const std::size_t n = dim(r, 1, 8), t = dim(r, 1, 8);
    std::vector<std::size_t> pos(t);
    for (auto& i : pos) i = r.below(n);
    const Tensor w = random_tensor({t}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(gather(in[0], pos), w); },
                     {random_tensor({n}, r)})
        .max_relative_error;
  });
  run("cross_entropy_nll", [](Rng& r) {
    const std::size_t t = dim(r, 1, 5), v = dim(r, 2, 7);
    std::vector<TokenId> targets(t);
    for (auto& id : targets) id = static_cast<TokenId>(r.below(v));
    return gradcheck([&](const std::vector<Tensor>& in) { return cross_entropy_nll(in[0], targets); },
                     {random_tensor({t, v}, r, -2.0, 2.0)})
        .max_relative_error;
  });
  run("concat_rows", [](Rng& r) {
    const std::size_t a = dim(r, 1, 4), b = dim(r, 1, 4), n = dim(r, 1, 5);
    const Tensor w = random_tensor({a + b, n}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(concat_rows(in), w); },
                     {random_tensor({a, n}, r), random_tensor({b, n}, r)})
        .max_relative_error;
  });
  run("concat_cols", [](Rng& r) {
    const std::size_t m = dim(r, 1, 4), a = dim(r, 1, 4), b = dim(r, 1, 4);
    const Tensor w = random_tensor({m, a + b}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(concat_cols(in), w); },
                     {random_tensor({m, a}, r), random_tensor({m, b}, r)})
        .max_relative_error;
  });
  run("slice_rows", [](Rng& r) {
    const std::size_t m = dim(r, 2, 6), n = dim(r, 1, 5);
    const std::size_t b = r.below(m), e = b + 1 + r.below(m - b);
    const Tensor w = random_tensor({e - b, n}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(slice_rows(in[0], b, e), w); },
                     {random_tensor({m, n}, r)})
        .max_relative_error;
  });
  run("slice_cols", [](Rng& r) {
    const std::size_t m = dim(r, 1, 5), n = dim(r, 2, 6);
    const std::size_t b = r.below(n), e = b + 1 + r.below(n - b);
    const Tensor w = random_tensor({m, e - b}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(slice_cols(in[0], b, e), w); },
                     {random_tensor({m, n}, r)})
        .max_relative_error;
  });
  run("reshape", [](Rng& r) {
    const std::size_t m = dim(r, 1, 4), n = dim(r, 1, 4);
    const Tensor w = random_tensor({n, m}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(reshape(in[0], {n, m}), w); },
                     {random_tensor({m, n}, r)})
        .max_relative_error;
  });
  run("softmax_masked", [](Rng& r) {
    const std::size_t n = dim(r, 1, 6);
    const AttentionMask mask = AttentionMask::causal(n);
    const Tensor w = random_tensor({n, n}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(softmax_rows(in[0], &mask), w); },
                     {random_tensor({n, n}, r, -2.0, 2.0)})
        .max_relative_error;
  });
  run("softmax_with_bias", [](Rng& r) {
    const std::size_t m = dim(r, 1, 5), n = dim(r, 1, 6);
    const Tensor w = random_tensor({m, n}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(softmax_with_bias(in[0], &in[1]), w); },
                     {random_tensor({m, n}, r), random_tensor({n}, r)})
        .max_relative_error;
  });
  run("attention", [](Rng& r) {
    const std::size_t heads = dim(r, 1, 2), d = heads * dim(r, 1, 3), t = dim(r, 1, 4), k = dim(r, 1, 4);
    Rng init = r.fork();
    const auto attn = MultiHeadAttention::make(d, heads, init, 0.5);
    const Tensor w = random_tensor({t, d}, r);
    return gradcheck(
               [&](const std::vector<Tensor>& in) { return readout(attn(in[0], in[1], &in[2], nullptr), w); },
               {random_tensor({t, d}, r), random_tensor({k, d}, r), random_tensor({k}, r)})
        .max_relative_error;
  });
  run("encoder_layer", [](Rng& r) {
    const std::size_t d = 4, t = dim(r, 1, 4);
    Rng init = r.fork();
    EncoderLayer layer{LayerNorm::make(d), MultiHeadAttention::make(d, 2, init, 0.5), LayerNorm::make(d),
                       FeedForward{Linear::make(d, 8, true, init, 0.5), Linear::make(8, d, true, init, 0.5)}};
    const Tensor w = random_tensor({t, d}, r);
    return gradcheck([&](const std::vector<Tensor>& in) { return readout(layer(in[0]), w); },
                     {random_tensor({t, d}, r)})
        .max_relative_error;
  });
  return results;
}

}  // namespace nugget
