#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "nugget/training.hpp"

using namespace nugget;

namespace {

struct Corpus {
  Vocabulary vocab;
  std::vector<Document> docs;
};

Corpus one_sentence_corpus(std::size_t n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.documents = n;
  spec.min_sentences = 1;
  spec.max_sentences = 1;
  Rng rng(seed);
  const auto arts = gen_synthetic_corpus(spec, rng);
  std::vector<std::vector<std::string>> words;
  for (const auto& a : arts)
    for (const auto& s : a) words.push_back(s.words);
  Corpus c{Vocabulary::build(words), {}};
  for (std::size_t i = 0; i < arts.size(); ++i) c.docs.push_back(make_document("d" + std::to_string(i), arts[i], c.vocab));
  return c;
}

std::vector<std::vector<double>> snapshot(const NuggetModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("nll of uniform logits is ln V and vanishes with a growing margin") {
  const std::vector<TokenId> t{1, 3};
  CHECK(nll_loss(Tensor::zeros({2, 7}), t).item() == doctest::Approx(std::log(7.0)));
  double previous = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 50.0}) {
    std::vector<double> l(14, 0.0);
    l[1] = margin;
    l[7 + 3] = margin;
    const double loss = nll_loss(Tensor::from({2, 7}, l), t).item();
    CHECK(loss < previous);
    previous = loss;
  }
  CHECK(previous < 1e-20);
  CHECK_THROWS(nll_loss(Tensor::zeros({2, 7}), std::vector<TokenId>{1}));
  CHECK_THROWS(nll_loss(Tensor::zeros({2, 7}), std::vector<TokenId>{1, 7}));
}

TEST_CASE("nll agrees with a direct per-token computation") {
  Rng rng(1);
  std::vector<double> l(5 * 9);
  for (auto& x : l) x = rng.normal() * 3;
  std::vector<TokenId> t(5);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(9));
  double expected = 0;
  for (std::size_t r = 0; r < 5; ++r) {
    double z = 0;
    for (std::size_t c = 0; c < 9; ++c) z += std::exp(l[r * 9 + c]);
    expected -= (l[r * 9 + static_cast<std::size_t>(t[r])] - std::log(z)) / 5.0;
  }
  CHECK(nll_loss(Tensor::from({5, 9}, l), t).item() == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("autoencoding noise") {
  Document doc;
  for (int i = 0; i < 100; ++i) doc.tokens.push_back(4 + i % 7);
  doc.sentence_ends = {49, 99};
  Rng rng(2);
  CHECK(make_ae_example(doc, 0.0, rng).source.tokens == doc.tokens);

  const double p = 0.3;
  double total = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto ex = make_ae_example(doc, p, rng);
    CHECK(ex.target == doc.tokens);
    total += static_cast<double>(ex.source.tokens.size());
  }
  const double mean = total / draws;
  const double sigma = std::sqrt(100 * p * (1 - p) / draws);
  CHECK(std::abs(mean - 100 * (1 - p)) < 3 * sigma);

  Document one;
  one.tokens = {9};
  one.sentence_ends = {0};
  for (int i = 0; i < 50; ++i) CHECK(make_ae_example(one, 0.99, rng).source.tokens.size() == 1);
  CHECK_THROWS(make_ae_example(Document{}, 0.1, rng));
  CHECK_THROWS(make_ae_example(doc, 1.0, rng));
}

TEST_CASE("noisy sources keep consistent sentence ends") {
  Document doc;
  for (int i = 0; i < 12; ++i) doc.tokens.push_back(4 + i);
  doc.sentence_ends = {3, 7, 11};
  Rng rng(3);
  for (int i = 0; i < 300; ++i) {
    const auto src = make_ae_example(doc, 0.5, rng).source;
    REQUIRE_FALSE(src.sentence_ends.empty());
    CHECK(src.sentence_ends.back() == src.tokens.size() - 1);
    CHECK(std::is_sorted(src.sentence_ends.begin(), src.sentence_ends.end()));
  }
}

TEST_CASE("fully frozen encoder stays bitwise identical") {
  auto corpus = one_sentence_corpus(12, 4);
  auto cfg = testing::tiny_config(corpus.vocab.size());
  NuggetModel model(cfg);
  const auto before = snapshot(model);
  TrainConfig tc;
  tc.freeze_below = cfg.encoder_layers + 1;
  tc.learn_rate = 1e-2;
  tc.max_steps = 10;
  tc.batch_size = 4;
  Trainer trainer(model, tc);
  train_documents(trainer, corpus.docs, {});
  const auto after = snapshot(model);
  const auto params = model.parameters();
  bool decoder_moved = false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    INFO(params[i].name);
    if (params[i].name.rfind("encoder.", 0) == 0) CHECK(before[i] == after[i]);
    if (params[i].name.rfind("decoder.", 0) == 0) decoder_moved = decoder_moved || before[i] != after[i];
  }
  CHECK(decoder_moved);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto corpus = one_sentence_corpus(16, 5);
  auto run = [&] {
    NuggetModel model(testing::tiny_config(corpus.vocab.size(), 9));
    TrainConfig tc;
    tc.learn_rate = 3e-3;
    tc.max_steps = 15;
    tc.batch_size = 4;
    tc.noise_rate = 0.2;
    Trainer trainer(model, tc);
    std::vector<double> losses;
    for (const auto& m : train_documents(trainer, corpus.docs, {})) losses.push_back(m.loss);
    return std::make_pair(losses, snapshot(model));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  auto corpus = one_sentence_corpus(4, 6);
  NuggetModel model(testing::tiny_config(corpus.vocab.size()));
  for (auto p : model.parameters())
    if (p.name == "decoder.vocab_proj.bias") p.tensor.mutable_data()[5] = std::nan("");
  TrainConfig tc;
  tc.max_steps = 1;
  Trainer trainer(model, tc);
  CHECK_THROWS_AS(train_documents(trainer, corpus.docs, {}), NonFiniteLoss);
}

TEST_CASE("gradient clipping bounds the global norm") {
  Tensor a = Tensor::from({2}, {0, 0}, true);
  Tensor b = Tensor::from({1}, {0}, true);
  a.mutable_grad()[0] = 3;
  a.mutable_grad()[1] = 4;
  b.mutable_grad()[0] = 12;
  const ParamList params{{"a", a}, {"b", b}};
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(13.0));
  CHECK(a.grad()[0] == doctest::Approx(3.0 / 13));
  CHECK(b.grad()[0] == doctest::Approx(12.0 / 13));
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("adam takes a learning-rate sized first step against the gradient") {
  Tensor w = Tensor::from({2}, {1.0, -1.0}, true);
  Adam opt({{"w", w}}, 0.1);
  w.mutable_grad()[0] = 0.5;
  w.mutable_grad()[1] = -2.0;
  opt.step();
  CHECK(w.data()[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(w.data()[1] == doctest::Approx(-0.9).epsilon(1e-6));
}

TEST_CASE("batch sampler visits every index once per epoch") {
  BatchSampler s(10, 4, 1);
  std::vector<int> seen(10, 0);
  for (int b = 0; b < 5; ++b)
    for (auto i : s.next()) ++seen[i];
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 2; }));
}

TEST_CASE("checkpoints round trip byte for byte") {
  auto corpus = one_sentence_corpus(6, 7);
  NuggetModel model(testing::tiny_config(corpus.vocab.size(), 3));
  const auto bytes = serialize_checkpoint(model, corpus.vocab, 17);
  const Checkpoint ck = parse_checkpoint(bytes);
  CHECK(ck.step == 17);
  CHECK(ck.vocab.words() == corpus.vocab.words());
  const NuggetModel loaded = model_from_checkpoint(ck);
  CHECK(serialize_checkpoint(loaded, ck.vocab, ck.step) == bytes);

  const auto path = (std::filesystem::temp_directory_path() / "nugget_ck_test.bin").string();
  save_checkpoint(path, loaded, ck.vocab, ck.step);
  const Checkpoint disk = read_checkpoint(path);
  CHECK(serialize_checkpoint(model_from_checkpoint(disk), disk.vocab, disk.step) == bytes);

  const auto& doc = corpus.docs[0];
  const Tensor a = model.decode(model.generate(doc.tokens), decoder_inputs_for(doc.tokens), false);
  const Tensor b = loaded.decode(loaded.generate(doc.tokens), decoder_inputs_for(doc.tokens), false);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  CHECK_THROWS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)));
  CHECK_THROWS(parse_checkpoint("NOTACKPT" + bytes.substr(8)));
}

TEST_CASE("a 50-document memorization run halves the loss in 500 steps at default settings") {
  auto corpus = one_sentence_corpus(50, 1);
  ModelConfig cfg;
  cfg.vocab_size = corpus.vocab.size();
  cfg.ratio = 1.0;
  NuggetModel model(cfg);
  TrainConfig tc;
  tc.max_steps = 500;
  Trainer trainer(model, tc);
  const auto h = train_documents(trainer, corpus.docs, {});
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += h[i].loss / 20;
    last += h[h.size() - 1 - i].loss / 20;
  }
  CHECK(last <= 0.5 * first);
}

TEST_CASE("tiny autoencoder at r = 1 reaches 99% teacher-forced accuracy") {
  auto corpus = one_sentence_corpus(50, 1);
  auto cfg = testing::tiny_config(corpus.vocab.size());
  cfg.d_model = 32;
  cfg.d_ff = 128;
  cfg.encoder_layers = 2;
  cfg.decoder_layers = 2;
  cfg.scorer_layer = 1;
  cfg.ratio = 1.0;
  NuggetModel model(cfg);
  TrainConfig tc;
  tc.freeze_below = 0;
  tc.learn_rate = 3e-3;
  tc.max_steps = 400;
  Trainer trainer(model, tc);
  train_documents(trainer, corpus.docs, {});
  CHECK(teacher_forced_accuracy(model, corpus.docs) >= 0.99);
}
