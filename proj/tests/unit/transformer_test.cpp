#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "nugget/transformer.hpp"

using namespace nugget;

TEST_CASE("encoder returns L+1 states of the input length") {
  Rng rng(1);
  const auto cfg = testing::tiny_config();
  Encoder enc(cfg, rng);
  const auto tokens = testing::random_tokens(7, cfg.vocab_size, rng);
  const auto states = enc.encode(tokens);
  REQUIRE(states.size() == cfg.encoder_layers + 1);
  for (const auto& s : states) {
    CHECK(s.rows() == 7);
    CHECK(s.cols() == cfg.d_model);
  }
  CHECK_THROWS(enc.encode(std::vector<TokenId>{}));
  CHECK_THROWS(enc.encode(std::vector<TokenId>(cfg.max_len + 1, 4)));
}

TEST_CASE("running the encoder in pieces matches one pass bitwise") {
  Rng rng(2);
  const auto cfg = testing::tiny_config();
  Encoder enc(cfg, rng);
  const auto tokens = testing::random_tokens(9, cfg.vocab_size, rng);
  const auto states = enc.encode(tokens);
  const Tensor lower = enc.run(enc.embed(tokens), 0, 2);
  const Tensor top = enc.run(lower, 2, cfg.encoder_layers);
  CHECK(std::equal(lower.data().begin(), lower.data().end(), states[2].data().begin()));
  CHECK(std::equal(top.data().begin(), top.data().end(), states.back().data().begin()));
}

TEST_CASE("decoder is causal") {
  Rng rng(3);
  const auto cfg = testing::tiny_config();
  Decoder dec(cfg, rng);
  Tensor memory = Tensor::from({3, cfg.d_model}, std::vector<double>(3 * cfg.d_model, 0.3));
  auto tokens = testing::random_tokens(6, cfg.vocab_size, rng);
  const Tensor a = dec.decode(tokens, memory);
  tokens[4] = tokens[4] == 5 ? 6 : 5;
  const Tensor b = dec.decode(tokens, memory);
  const std::size_t v = cfg.vocab_size;
  for (std::size_t i = 0; i < 4 * v; ++i) CHECK(a.data()[i] == b.data()[i]);
  bool changed = false;
  for (std::size_t i = 4 * v; i < 6 * v; ++i) changed = changed || a.data()[i] != b.data()[i];
  CHECK(changed);
}

TEST_CASE("incremental decoding matches teacher forcing") {
  Rng rng(4);
  const auto cfg = testing::tiny_config();
  Decoder dec(cfg, rng);
  std::vector<double> mem(2 * cfg.d_model);
  for (auto& x : mem) x = rng.normal();
  const Tensor memory = Tensor::from({2, cfg.d_model}, mem);
  const Tensor bias = Tensor::from({2}, {0.7, -0.4});
  const auto tokens = testing::random_tokens(5, cfg.vocab_size, rng);
  const Tensor full = dec.decode(tokens, memory, &bias);
  DecoderState state = dec.start(memory, &bias);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto logits = dec.step(state, tokens[t]);
    for (std::size_t v = 0; v < cfg.vocab_size; ++v)
      CHECK(logits[v] == doctest::Approx(full.at(t, v)).epsilon(1e-12));
  }
}

TEST_CASE("cross-attention bias enters every head as a scaled logit") {
  Rng rng(5);
  const auto cfg = testing::tiny_config();
  Decoder dec(cfg, rng);
  const Tensor memory = Tensor::from({2, cfg.d_model}, std::vector<double>(2 * cfg.d_model, 0.1));
  const Tensor zero = Tensor::zeros({2});
  const Tensor bias = Tensor::from({2}, {1.0, -1.0});
  const std::vector<TokenId> tokens{1, 5, 6};
  AttentionTrace base, shifted;
  dec.decode(tokens, memory, &zero, &base);
  dec.decode(tokens, memory, &bias, &shifted);
  REQUIRE(base.cross_logits.size() == cfg.decoder_layers * cfg.heads);
  // The first layer's logits differ exactly by bias / sqrt(d_head).
  const double inv = 1.0 / std::sqrt(static_cast<double>(cfg.d_model / cfg.heads));
  for (std::size_t h = 0; h < cfg.heads; ++h)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t j = 0; j < 2; ++j)
        CHECK(shifted.cross_logits[h].at(r, j) - base.cross_logits[h].at(r, j) ==
              doctest::Approx(inv * bias.data()[j]).epsilon(1e-12));
}

TEST_CASE("decoder rejects malformed memory") {
  Rng rng(6);
  const auto cfg = testing::tiny_config();
  Decoder dec(cfg, rng);
  const std::vector<TokenId> tokens{1, 5};
  CHECK_THROWS(dec.decode(tokens, Tensor::zeros({2, cfg.d_model + 1})));
  const Tensor memory = Tensor::zeros({2, cfg.d_model});
  const Tensor bias = Tensor::zeros({3});
  CHECK_THROWS(dec.decode(tokens, memory, &bias));
}
