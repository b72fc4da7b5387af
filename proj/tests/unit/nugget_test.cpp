#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "nugget/nugget.hpp"

using namespace nugget;

namespace {

void set_identity(Tensor t) {
  auto v = t.mutable_data();
  const std::size_t d = t.rows();
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] = i == j ? 1.0 : 0.0;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("k is the ceiling of n r for every length and ratio") {
  const std::pair<std::size_t, std::size_t> ratios[] = {{5, 100}, {10, 100}, {15, 100}, {25, 100}, {1, 1}};
  for (std::size_t n = 1; n <= 256; ++n)
    for (auto [num, den] : ratios) {
      const std::size_t expected = (n * num + den - 1) / den;
      CHECK(compute_k(n, static_cast<double>(num) / static_cast<double>(den)) == expected);
    }
  CHECK(compute_k(128, 0.05) == 7);
  CHECK(compute_k(1, 0.05) == 1);
  CHECK_THROWS_AS(compute_k(10, 0.0), ConfigError);
  CHECK_THROWS_AS(compute_k(10, 1.2), ConfigError);
}

TEST_CASE("generate selects the top-k scores in ascending order") {
  Rng rng(11);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    NuggetModel model(testing::tiny_config(24, seed));
    const auto tokens = testing::random_tokens(5 + seed * 4, 24, rng);
    for (double r : {0.1, 0.25, 1.0}) {
      const NuggetSet set = model.generate(tokens, nullptr, r);
      CHECK(set.k == compute_k(tokens.size(), r));
      CHECK(set.indices.size() == set.k);
      CHECK(std::is_sorted(set.indices.begin(), set.indices.end()));
      CHECK(set.indices == topk_indices(set.token_scores.data(), set.k));
      CHECK(set.vectors.rows() == set.k);
      CHECK(set.vectors.cols() == model.config().d_model);
      for (std::size_t j = 0; j < set.k; ++j) CHECK(set.selected_scores.data()[j] == set.token_scores.data()[set.indices[j]]);
    }
  }
}

TEST_CASE("constant scores resolve to the leading positions") {
  NuggetModel model(testing::tiny_config());
  for (auto p : model.parameters())
    if (p.name == "scorer.out.weight") std::fill(p.tensor.mutable_data().begin(), p.tensor.mutable_data().end(), 0.0);
  const std::vector<TokenId> tokens{5, 6, 7, 8, 9, 10, 11, 12};
  const NuggetSet set = model.generate(tokens, nullptr, 0.25);
  CHECK(set.indices == std::vector<std::size_t>{0, 1});
}

TEST_CASE("identity projection at r = 1 reproduces the injected encoder") {
  NuggetModel model(testing::tiny_config());
  set_identity(model.scorer().value_proj);
  Rng rng(12);
  const auto tokens = testing::random_tokens(10, 24, rng);
  const NuggetSet set = model.generate(tokens, nullptr, 1.0);
  const Injection inject{model.config().scorer_layer, model.type_embeddings(tokens.size(), set.indices)};
  const auto states = model.encoder().encode(tokens, &inject);
  CHECK(same_bits(set.vectors, states.back()));
  // Without feedback the plain encoder comes back.
  model.mutable_config().feedback = false;
  const NuggetSet plain = model.generate(tokens, nullptr, 1.0);
  CHECK(same_bits(plain.vectors, model.encoder().encode(tokens).back()));
  CHECK_FALSE(same_bits(plain.vectors, set.vectors));
}

TEST_CASE("feedback changes only the layers above the scorer") {
  NuggetModel model(testing::tiny_config());
  Rng rng(13);
  const auto tokens = testing::random_tokens(6, 24, rng);
  const NuggetSet set = model.generate(tokens);
  const Injection inject{model.config().scorer_layer, model.type_embeddings(tokens.size(), set.indices)};
  const auto injected = model.encoder().encode(tokens, &inject);
  const auto plain = model.encoder().encode(tokens);
  for (std::size_t l = 0; l <= model.config().scorer_layer; ++l) CHECK(same_bits(injected[l], plain[l]));
  CHECK_FALSE(same_bits(injected.back(), plain.back()));
}

TEST_CASE("rule-based selectors") {
  Vocabulary vocab = Vocabulary::from_words({"<pad>", "<bos>", "<eos>", "<unk>", "a", "b", ",", "."});
  const std::vector<Sentence> sents{{{"a", "b", ",", "a", "."}}, {{"b", "b", "a", "."}}};
  const Document doc = make_document("d", sents, vocab);
  CHECK(sentence_boundary_selector(doc) == std::vector<std::size_t>{4, 8});
  const auto punct = vocab.punctuation_ids();
  // n = 9, r = 0.25 -> 3 chunks [0,3) [3,6) [6,9).
  CHECK(chunking_selector(doc, 0.25, punct) == std::vector<std::size_t>{2, 4, 8});

  auto cfg = testing::tiny_config(vocab.size());
  cfg.selector = SelectorKind::sentence;
  NuggetModel model(cfg);
  model.set_punctuation(punct);
  const NuggetSet set = model.generate(doc.tokens, &doc);
  CHECK(set.indices == std::vector<std::size_t>{4, 8});
  CHECK(model.memory_bias(set, true) == nullptr);
  CHECK_THROWS(model.generate(doc.tokens));

  Document broken = doc;
  broken.sentence_ends.clear();
  CHECK_THROWS(sentence_boundary_selector(broken));
}

TEST_CASE("score gradient equals the scaled sum of cross-attention logit gradients") {
  Rng rng(14);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cfg = testing::tiny_config(30, seed);
    cfg.heads = seed % 2 ? 4 : 2;
    cfg.decoder_layers = 1 + seed % 3;
    cfg.ratio = seed % 3 == 0 ? 1.0 : 0.3;
    NuggetModel model(cfg);
    const auto tokens = testing::random_tokens(4 + rng.below(12), 30, rng);
    const auto check = check_score_gradient(model, tokens);
    CHECK(check.compared == compute_k(tokens.size(), cfg.ratio));
    CHECK(check.max_abs_gradient > 0.0);
    CHECK(check.max_abs_deviation <= 1e-8);
    CHECK(check.max_scorer_gradient > 0.0);
  }
}

TEST_CASE("without the bias path the scorer receives no gradient") {
  auto cfg = testing::tiny_config(30, 3);
  cfg.bias_path = false;
  NuggetModel model(cfg);
  Rng rng(15);
  const auto check = check_score_gradient(model, testing::random_tokens(9, 30, rng));
  CHECK(check.compared == 0);
  CHECK(check.max_scorer_gradient == 0.0);
}

TEST_CASE("freezing marks the bottom of the encoder") {
  NuggetModel model(testing::tiny_config());
  const auto frozen = model.freeze_encoder_below(2);
  for (const auto& p : model.parameters()) {
    const bool expect = p.name == "encoder.token_table" || p.name == "encoder.position_table" ||
                        p.name.rfind("encoder.layer0.", 0) == 0 || p.name.rfind("encoder.layer1.", 0) == 0;
    INFO(p.name);
    CHECK(p.tensor.requires_grad() == !expect);
    CHECK((std::find(frozen.begin(), frozen.end(), p.name) != frozen.end()) == expect);
  }
  NuggetModel all(testing::tiny_config());
  all.freeze_encoder_below(4);
  for (const auto& p : all.parameters())
    if (p.name.rfind("encoder.", 0) == 0) CHECK_FALSE(p.tensor.requires_grad());
  CHECK_THROWS_AS(all.freeze_encoder_below(5), ConfigError);
}

TEST_CASE("parameter names are unique and stable") {
  NuggetModel a(testing::tiny_config());
  NuggetModel b(testing::tiny_config());
  const auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  std::set<std::string> names;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(same_bits(pa[i].tensor, pb[i].tensor));
    names.insert(pa[i].name);
  }
  CHECK(names.size() == pa.size());
}

TEST_CASE("nugget set json") {
  NuggetModel model(testing::tiny_config());
  const std::vector<TokenId> tokens{5, 6, 7, 8};
  const auto j = model.generate(tokens).to_json();
  CHECK(j.at("k") == 2);
  CHECK(j.at("indices").size() == 2);
}
