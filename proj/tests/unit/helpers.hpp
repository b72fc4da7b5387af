#pragma once

#include <vector>

#include "nugget/config.hpp"
#include "nugget/data.hpp"
#include "nugget/rng.hpp"

namespace testing {

inline nugget::ModelConfig tiny_config(std::size_t vocab = 24, std::uint64_t seed = 0) {
  nugget::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.heads = 2;
  c.encoder_layers = 3;
  c.decoder_layers = 2;
  c.d_ff = 16;
  c.max_len = 64;
  c.scorer_layer = 2;
  c.ratio = 0.5;
  c.seed = seed;
  return c;
}

inline std::vector<nugget::TokenId> random_tokens(std::size_t n, std::size_t vocab, nugget::Rng& rng) {
  std::vector<nugget::TokenId> t(n);
  for (auto& x : t) x = static_cast<nugget::TokenId>(4 + rng.below(vocab - 4));
  return t;
}

}  // namespace testing
