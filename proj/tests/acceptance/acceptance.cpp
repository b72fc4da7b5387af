// Acceptance run: one PASS/FAIL line per criterion, plus a JSON report and
// the analysis artifacts in --out.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nugget/gradcheck.hpp"
#include "nugget/inference.hpp"
#include "nugget/lm.hpp"
#include "nugget/similarity.hpp"
#include "nugget/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nugget;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  json metrics = json::object();
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double x, int precision = 4) {
  std::ostringstream ss;
  ss << std::setprecision(precision) << x;
  return ss.str();
}

fs::path g_out = "acceptance_run";

void write_text(const std::string& name, const std::string& text) {
  std::ofstream(g_out / name, std::ios::binary) << text;
}

void log(const std::string& line) { std::cerr << "  .. " << line << std::endl; }

// ------------------------------------------------------------------ shared data

struct Corpus {
  Vocabulary vocab;
  std::vector<Document> docs;
};

// Short clause documents (one or two sentences) drawn from the default lexicon.
Corpus clause_corpus(std::size_t documents, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.documents = documents;
  spec.min_sentences = 1;
  spec.max_sentences = 2;
  Rng rng(seed);
  const auto articles = gen_synthetic_corpus(spec, rng);
  const Lexicon lex = Lexicon::make(spec);
  const std::vector<std::vector<std::string>> words{lex.all_words()};
  Corpus c{Vocabulary::build(words), {}};
  for (std::size_t i = 0; i < articles.size(); ++i)
    c.docs.push_back(make_document("doc" + std::to_string(i), articles[i], c.vocab));
  return c;
}

ModelConfig desk_config(std::size_t vocab, double ratio) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 64;
  c.heads = 4;
  c.encoder_layers = 4;
  c.decoder_layers = 4;
  c.d_ff = 256;
  c.max_len = 128;
  c.scorer_layer = 3;
  c.ratio = ratio;
  return c;
}

// The reconstruction autoencoder shared by several criteria.
struct AeModel {
  Corpus corpus;
  std::unique_ptr<NuggetModel> model;
  std::vector<TrainMetrics> history;
  double seconds = 0.0;
};

constexpr std::size_t kAeDocuments = 2000;
constexpr std::size_t kAeSteps = 6000;
constexpr std::size_t kAeDecayAt = 4000;
constexpr double kAeLearnRate = 1e-3;

AeModel& ae_model() {
  static std::optional<AeModel> cached;
  if (cached) return *cached;
  cached.emplace();
  AeModel& ae = *cached;
  ae.corpus = clause_corpus(kAeDocuments, 101);
  ae.model = std::make_unique<NuggetModel>(desk_config(ae.corpus.vocab.size(), 0.1));
  ae.model->set_punctuation(ae.corpus.vocab.punctuation_ids());
  TrainConfig tc;
  tc.freeze_below = 0;
  tc.learn_rate = kAeLearnRate;
  tc.max_steps = kAeSteps;
  tc.ratio_mix = {0.05, 0.1, 0.25, 1.0};
  tc.seed = 5;
  Trainer trainer(*ae.model, tc);
  const auto started = Clock::now();
  log("training the reconstruction autoencoder (" + std::to_string(kAeSteps) + " steps)");
  ae.history = train_documents(trainer, ae.corpus.docs, {}, [&](const TrainMetrics& m) {
    if (m.step == kAeDecayAt) trainer.set_learn_rate(kAeLearnRate / 4);
    if (m.step % 1000 == 0) log("step " + std::to_string(m.step) + " loss " + fmt(m.loss));
  });
  ae.seconds = seconds_since(started);
  save_checkpoint((g_out / "ae_checkpoint.bin").string(), *ae.model, ae.corpus.vocab, trainer.steps());
  return ae;
}

// ------------------------------------------------------------------ criteria

Outcome gradient_correctness() {
  const auto started = Clock::now();
  const auto checks = check_primitives(20, 2024);
  const double elapsed = seconds_since(started);
  Outcome o;
  double worst = 0.0;
  std::string worst_name;
  std::size_t min_cases = SIZE_MAX;
  for (const auto& c : checks) {
    if (c.max_relative_error >= worst) {
      worst = c.max_relative_error;
      worst_name = c.name;
    }
    min_cases = std::min(min_cases, c.cases);
    o.metrics["primitives"][c.name] = c.max_relative_error;
  }
  o.pass = worst <= 1e-4 && min_cases >= 20 && elapsed < 60.0;
  o.detail = std::to_string(checks.size()) + " primitives x " + std::to_string(min_cases) +
             " cases, worst rel err " + fmt(worst) + " (" + worst_name + "), " + fmt(elapsed, 3) + " s";
  o.metrics["worst"] = worst;
  o.metrics["seconds"] = elapsed;
  return o;
}

Outcome score_gradient_identity() {
  Rng rng(77);
  double deviation = 0.0, largest = 0.0;
  std::size_t compared = 0;
  for (int c = 0; c < 10; ++c) {
    ModelConfig mc;
    mc.vocab_size = 20 + rng.below(30);
    mc.heads = 1 + rng.below(4);
    mc.d_model = mc.heads * (2 + rng.below(6));
    mc.d_ff = 2 * mc.d_model;
    mc.encoder_layers = 1 + rng.below(4);
    mc.decoder_layers = 1 + rng.below(3);
    mc.scorer_layer = rng.below(mc.encoder_layers + 1);
    mc.ratio = 0.05 + 0.95 * rng.uniform();
    mc.feedback = rng.bernoulli(0.7);
    mc.seed = rng.next_u64();
    NuggetModel model(mc);
    std::vector<TokenId> tokens(2 + rng.below(30));
    for (auto& t : tokens) t = static_cast<TokenId>(4 + rng.below(mc.vocab_size - 4));
    const auto check = check_score_gradient(model, tokens);
    deviation = std::max(deviation, check.max_abs_deviation);
    largest = std::max(largest, check.max_abs_gradient);
    compared += check.compared;
  }
  ModelConfig off;
  off.vocab_size = 30;
  off.d_model = 16;
  off.heads = 2;
  off.d_ff = 32;
  off.bias_path = false;
  NuggetModel model(off);
  Rng tok(3);
  std::vector<TokenId> tokens(20);
  for (auto& t : tokens) t = static_cast<TokenId>(4 + tok.below(26));
  const double scorer_grad = check_score_gradient(model, tokens).max_scorer_gradient;

  Outcome o;
  o.pass = deviation <= 1e-8 && compared > 0 && scorer_grad == 0.0;
  o.detail = "10 configs, " + std::to_string(compared) + " scores, max |dev| " + fmt(deviation) +
             " (largest |dl/ds| " + fmt(largest) + "); bias path off: max scorer grad " + fmt(scorer_grad);
  o.metrics = {{"max_abs_deviation", deviation}, {"compared", compared}, {"scorer_grad_without_bias", scorer_grad}};
  return o;
}

// Independent reference: ceil(n * p / q) in integers.
std::size_t integer_ceil(std::size_t n, std::size_t p, std::size_t q) { return std::max<std::size_t>(1, (n * p + q - 1) / q); }

std::vector<std::size_t> reference_topk(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Outcome selection_contract() {
  const std::pair<double, std::pair<std::size_t, std::size_t>> ratios[] = {
      {0.05, {5, 100}}, {0.1, {10, 100}}, {0.15, {15, 100}}, {0.25, {25, 100}}, {1.0, {1, 1}}};
  ModelConfig mc;
  mc.vocab_size = 40;
  mc.d_model = 8;
  mc.heads = 2;
  mc.d_ff = 16;
  mc.encoder_layers = 2;
  mc.decoder_layers = 1;
  mc.scorer_layer = 1;
  mc.max_len = 256;
  NuggetModel model(mc);
  Rng rng(9);
  std::size_t checked = 0, failures = 0;
  NoGradGuard guard;
  for (std::size_t n = 1; n <= 256; ++n) {
    std::vector<TokenId> tokens(n);
    for (auto& t : tokens) t = static_cast<TokenId>(4 + rng.below(36));
    // Coarse scores force many exact ties.
    std::vector<double> tied(n);
    for (auto& s : tied) s = static_cast<double>(rng.below(4));
    for (const auto& [r, frac] : ratios) {
      const std::size_t k = integer_ceil(n, frac.first, frac.second);
      const NuggetSet set = model.generate(tokens, nullptr, r);
      bool ok = compute_k(n, r) == k && set.k == k && set.indices.size() == k &&
                std::is_sorted(set.indices.begin(), set.indices.end()) &&
                set.indices == reference_topk(set.token_scores.data(), k);
      ok = ok && topk_indices(tied, k) == reference_topk(tied, k);
      failures += !ok;
      ++checked;
    }
  }
  Outcome o;
  o.pass = failures == 0;
  o.detail = std::to_string(checked) + " (n, r) pairs, " + std::to_string(failures) + " violations";
  o.metrics = {{"checked", checked}, {"failures", failures}};
  return o;
}

Outcome frozen_layers() {
  const Corpus corpus = clause_corpus(200, 31);
  ModelConfig mc = desk_config(corpus.vocab.size(), 0.25);
  NuggetModel model(mc);
  std::map<std::string, std::vector<double>> before;
  for (const auto& p : model.parameters()) before[p.name].assign(p.tensor.data().begin(), p.tensor.data().end());
  TrainConfig tc;
  tc.freeze_below = 3;
  tc.max_steps = 1000;
  tc.learn_rate = 1e-3;
  tc.seed = 13;
  Trainer trainer(model, tc);
  const auto started = Clock::now();
  train_documents(trainer, corpus.docs, {});
  const double elapsed = seconds_since(started);

  std::size_t frozen_changed = 0, frozen_count = 0, trainable_changed = 0, trainable = 0;
  const std::set<std::string> frozen(trainer.frozen().begin(), trainer.frozen().end());
  for (const auto& p : model.parameters()) {
    const auto& old = before.at(p.name);
    const bool same = std::equal(old.begin(), old.end(), p.tensor.data().begin(), p.tensor.data().end(),
                                 [](double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); });
    if (frozen.contains(p.name)) {
      ++frozen_count;
      frozen_changed += !same;
    } else {
      ++trainable;
      trainable_changed += !same;
    }
  }
  const bool expected_set = frozen.contains("encoder.token_table") && frozen.contains("encoder.position_table") &&
                            std::none_of(frozen.begin(), frozen.end(), [](const std::string& n) {
                              return n.rfind("encoder.layer3", 0) == 0 || n.rfind("decoder", 0) == 0;
                            });
  Outcome o;
  o.pass = trainer.steps() == 1000 && frozen_count > 0 && frozen_changed == 0 && expected_set && trainable_changed > 0;
  o.detail = std::to_string(trainer.steps()) + " steps; " + std::to_string(frozen_count) + " frozen tensors, " +
             std::to_string(frozen_changed) + " changed; " + std::to_string(trainable_changed) + "/" +
             std::to_string(trainable) + " trainable tensors moved; " + fmt(elapsed, 3) + " s";
  o.metrics = {{"frozen", frozen_count}, {"frozen_changed", frozen_changed}, {"trainable_changed", trainable_changed}};
  return o;
}

constexpr std::size_t kAeEvalDocs = 200;

Outcome reconstruction() {
  AeModel& ae = ae_model();
  const std::vector<double> ratios{0.05, 0.25, 1.0};
  const std::span<const Document> eval(ae.corpus.docs.data(), kAeEvalDocs);
  const auto started = Clock::now();
  const auto rows = reconstruction_sweep(*ae.model, ratios, eval, 5);
  const double eval_seconds = seconds_since(started);
  write_text("reconstruction_sweep.csv", sweep_csv(rows));
  std::vector<double> ys;
  for (const auto& r : rows) ys.push_back(r.mean_bleu);
  write_text("reconstruction_sweep.svg", svg_line_chart(ratios, ys, "reconstruction BLEU", "r", "BLEU"));
  bool monotone = true;
  for (std::size_t i = 1; i < rows.size(); ++i) monotone &= rows[i].mean_bleu + 0.02 >= rows[i - 1].mean_bleu;
  const double total = ae.seconds + eval_seconds;
  Outcome o;
  o.pass = rows.back().mean_bleu >= 0.99 && monotone && total <= 30 * 60;
  o.detail = "BLEU r=0.05: " + fmt(rows[0].mean_bleu) + ", r=0.25: " + fmt(rows[1].mean_bleu) +
             ", r=1.0: " + fmt(rows[2].mean_bleu) + " on " + std::to_string(kAeEvalDocs) + " held-in docs; " +
             fmt(total, 4) + " s";
  o.metrics = sweep_json(rows);
  o.metrics = {{"sweep", sweep_json(rows)}, {"train_seconds", ae.seconds}, {"eval_seconds", eval_seconds},
               {"final_loss", ae.history.back().loss}};
  return o;
}

Outcome selector_nonuniformity() {
  AeModel& ae = ae_model();
  const auto report = nugget_token_stats(*ae.model, ae.corpus.docs, ae.corpus.vocab);
  write_text("token_stats.csv", token_stats_csv(report));
  write_text("token_stats.json", token_stats_json(report, 20).dump(2));
  const auto& top = report.rows.front();
  const double lift = top.nugget_freq / top.corpus_freq;
  std::string tops;
  for (std::size_t i = 0; i < std::min<std::size_t>(5, report.rows.size()); ++i)
    tops += (i ? ", " : "") + report.rows[i].word + " " + fmt(report.rows[i].nugget_freq, 3) + "/" +
            fmt(report.rows[i].corpus_freq, 3);
  Outcome o;
  o.pass = lift >= 1.5;
  o.detail = "top selected type '" + top.word + "' lift " + fmt(lift) + " at r=" + fmt(report.ratio, 2) +
             " (nugget/corpus freq: " + tops + ")";
  o.metrics = {{"top", top.word}, {"lift", lift}, {"ratio", report.ratio}};
  return o;
}

Outcome maxsim_oracle() {
  Rng rng(404);
  std::size_t mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t dim = 1 + rng.below(16), qi = 1 + rng.below(12), dj = 1 + rng.below(12);
    VectorSet q{qi, dim, std::vector<double>(qi * dim)}, d{dj, dim, std::vector<double>(dj * dim)};
    for (auto& v : q.values) v = rng.normal();
    for (auto& v : d.values) v = rng.normal();
    double total = 0.0;
    for (std::size_t i = 0; i < qi; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < dj; ++j) {
        double dot = 0.0, nq = 0.0, nd = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
          dot += q.values[i * dim + c] * d.values[j * dim + c];
          nq += q.values[i * dim + c] * q.values[i * dim + c];
          nd += d.values[j * dim + c] * d.values[j * dim + c];
        }
        best = std::max(best, dot / (std::sqrt(nq) * std::sqrt(nd)));
      }
      total += best;
    }
    mismatches += maxsim_mean(q, d) != total / static_cast<double>(qi);
  }
  double h20 = 0.0;
  for (int i = 1; i <= 20; ++i) h20 += 1.0 / i;
  const double expected = h20 / 20.0;
  std::vector<std::size_t> ranks;
  std::vector<double> scores(20);
  for (int t = 0; t < 100000; ++t) {
    for (auto& s : scores) s = rng.uniform();
    ranks.push_back(rank_candidates(scores, rng.below(20)).gold_rank);
  }
  const double simulated = mrr(ranks);
  Outcome o;
  o.pass = mismatches == 0 && std::abs(simulated - expected) <= 0.005;
  o.detail = "200 pairs, " + std::to_string(mismatches) + " mismatches; random MRR " + fmt(simulated, 5) +
             " vs H20/20 = " + fmt(expected, 5);
  o.metrics = {{"mismatches", mismatches}, {"simulated_mrr", simulated}, {"expected_mrr", expected}};
  return o;
}

constexpr std::size_t kPiArticles = 600;
constexpr std::size_t kPiEvalExamples = 200;
constexpr std::size_t kPiSteps = 500;
constexpr double kPiRatio = 0.25;

Outcome similarity_end_to_end() {
  AeModel& ae = ae_model();
  const auto started = Clock::now();
  SyntheticSpec spec;
  spec.documents = kPiArticles;
  spec.min_sentences = 2;
  spec.max_sentences = 4;
  Rng rng(11);
  const Lexicon lex = Lexicon::make(spec);
  const std::vector<std::vector<std::string>> words{lex.all_words()};
  const Vocabulary vocab = Vocabulary::build(words);
  const auto articles = gen_synthetic_corpus(spec, rng);
  const auto pairs = make_document_pairs(articles, lex, vocab, 64, rng);
  DatasetOptions opts;
  opts.candidates = 20;
  opts.drop_rate = 0.2;
  const auto examples = build_pi_dataset(pairs, rng, opts);
  const std::vector<RankingExample> eval(examples.begin(),
                                         examples.begin() + static_cast<std::ptrdiff_t>(std::min(kPiEvalExamples, examples.size())));
  std::ofstream jsonl(g_out / "pi_dataset.jsonl");
  for (const auto& ex : eval) jsonl << to_json(ex).dump() << '\n';

  std::vector<Document> train;
  for (const auto& p : pairs) {
    train.push_back(p.document);
    train.push_back(p.paraphrase);
  }

  auto score_all = [&](const NuggetModel& model, json& results) {
    std::string detail;
    for (auto scorer : {SimilarityScorer::nugget_maxsim_mean, SimilarityScorer::nugget_maxsim_max,
                        SimilarityScorer::mean_pool}) {
      const auto ranked = evaluate_ranking(model, eval, scorer);
      std::vector<std::size_t> ranks;
      for (const auto& r : ranked) ranks.push_back(r.gold_rank);
      const double value = mrr(ranks);
      results[to_string(scorer)] = value;
      detail += (detail.empty() ? "" : ", ") + to_string(scorer) + " " + fmt(value);
    }
    return detail;
  };

  json untrained_results;
  const std::string untrained_detail = score_all(NuggetModel(desk_config(vocab.size(), kPiRatio)), untrained_results);

  if (ae.corpus.vocab.size() != vocab.size()) throw std::logic_error("similarity: vocabulary mismatch");
  Checkpoint init = parse_checkpoint(serialize_checkpoint(*ae.model, ae.corpus.vocab, 0));
  init.model.ratio = kPiRatio;
  NuggetModel model = model_from_checkpoint(init);
  TrainConfig tc;
  tc.freeze_below = 3;
  tc.learn_rate = 1e-4;
  tc.noise_rate = 0.2;
  tc.max_steps = kPiSteps;
  tc.seed = 17;
  Trainer trainer(model, tc);
  log("fine-tuning the autoencoder on paraphrase articles (" + std::to_string(kPiSteps) + " steps, noise 0.2)");
  train_documents(trainer, train, {});

  json results;
  const std::string detail = score_all(model, results);
  const double nugget_mrr = results[to_string(SimilarityScorer::nugget_maxsim_mean)].get<double>();
  const double elapsed = seconds_since(started);
  Outcome o;
  o.pass = nugget_mrr >= 0.36 && eval.size() == kPiEvalExamples && elapsed <= 20 * 60;
  o.detail = "MRR over " + std::to_string(eval.size()) + " queries x 20 candidates: " + detail +
             " (untrained: " + untrained_detail + "); " + fmt(elapsed, 4) + " s";
  o.metrics = {{"mrr", results}, {"untrained_mrr", untrained_results}, {"examples", eval.size()},
               {"seconds", elapsed}};
  return o;
}

constexpr std::size_t kLmSegLen = 32;
constexpr std::size_t kLmTrainSegments = 4000;
constexpr std::size_t kLmEvalSegments = 60;
constexpr std::size_t kLmSteps = 600;
constexpr double kLmRatio = 0.5;

std::vector<TokenId> copy_stream(std::size_t segments, std::uint64_t seed, const Vocabulary& vocab) {
  SyntheticSpec spec;
  spec.kind = SyntheticSpec::Kind::copy;
  spec.documents = segments;
  spec.seg_len = kLmSegLen;
  Rng rng(seed);
  std::vector<TokenId> stream;
  for (const auto& article : gen_synthetic_corpus(spec, rng))
    for (const auto& line : article) {
      const auto ids = vocab.encode(line.words);
      stream.insert(stream.end(), ids.begin(), ids.end());
    }
  return stream;
}

Outcome lm_memory_utility() {
  AeModel& ae = ae_model();
  const auto train_stream = copy_stream(kLmTrainSegments, 21, ae.corpus.vocab);
  const auto eval_stream = copy_stream(kLmEvalSegments, 22, ae.corpus.vocab);
  const auto init = serialize_checkpoint(*ae.model, ae.corpus.vocab, 0);

  auto train_lm_model = [&](std::size_t history) {
    NuggetModel model = model_from_checkpoint(parse_checkpoint(init));
    TrainConfig tc;
    tc.objective = Objective::language_model;
    tc.freeze_below = 0;
    tc.learn_rate = 5e-4;
    tc.max_steps = kLmSteps;
    tc.seed = 23;
    Trainer trainer(model, tc);
    LmTrainOptions opts;
    opts.seg_len = kLmSegLen;
    opts.history = history;
    opts.ratio = kLmRatio;
    log("training the segment LM with h=" + std::to_string(history));
    train_lm(trainer, train_stream, opts);
    return model;
  };
  const auto started = Clock::now();
  const NuggetModel with_memory = train_lm_model(1);
  const NuggetModel without = train_lm_model(0);
  const double ppl1 = perplexity(with_memory, eval_stream, kLmSegLen, 1, kLmRatio).perplexity;
  const double ppl0 = perplexity(without, eval_stream, kLmSegLen, 0, kLmRatio).perplexity;
  const double gain = 1.0 - ppl1 / ppl0;

  // Sequential oracle on a three-segment toy stream.
  const std::vector<TokenId> toy(eval_stream.begin(), eval_stream.begin() + 3 * 8 - 3);
  double worst = 0.0;
  for (std::size_t h : {0, 1, 2}) {
    const double fast = perplexity(with_memory, toy, 8, h, kLmRatio).mean_nll;
    double nll = 0.0;
    for (std::size_t i = 0; i < toy.size(); ++i) {
      const std::size_t seg = i / 8;
      SegmentMemory memory(h);
      for (std::size_t p = seg >= h ? seg - h : 0; p < seg; ++p)
        memory.push(compress_segment(with_memory, std::span<const TokenId>(toy.data() + p * 8, 8), kLmRatio));
      std::vector<TokenId> recent{kBos};
      recent.insert(recent.end(), toy.begin() + static_cast<std::ptrdiff_t>(seg * 8),
                    toy.begin() + static_cast<std::ptrdiff_t>(i));
      const auto logits = lm_step(with_memory, recent, memory);
      nll -= log_softmax(logits)[static_cast<std::size_t>(toy[i])];
    }
    nll /= static_cast<double>(toy.size());
    worst = std::max(worst, std::abs(fast - nll) / nll);
  }
  const double elapsed = seconds_since(started);
  Outcome o;
  o.pass = gain >= 0.05 && worst <= 1e-10;
  o.detail = "held-out PPL h=1 " + fmt(ppl1) + " vs h=0 " + fmt(ppl0) + " (" + fmt(100 * gain, 3) +
             "% lower); sequential oracle rel err " + fmt(worst, 3) + "; " + fmt(elapsed, 4) + " s";
  o.metrics = {{"ppl_h1", ppl1}, {"ppl_h0", ppl0}, {"relative_gain", gain}, {"oracle_rel_err", worst},
               {"seconds", elapsed}};
  return o;
}

Outcome determinism() {
  const Corpus corpus = clause_corpus(60, 41);
  auto run = [&]() {
    ModelConfig mc = desk_config(corpus.vocab.size(), 0.25);
    mc.d_model = 32;
    mc.d_ff = 64;
    mc.seed = 99;
    NuggetModel model(mc);
    model.set_punctuation(corpus.vocab.punctuation_ids());
    TrainConfig tc;
    tc.freeze_below = 1;
    tc.learn_rate = 1e-3;
    tc.noise_rate = 0.1;
    tc.max_steps = 60;
    tc.seed = 7;
    Trainer trainer(model, tc);
    std::vector<std::uint64_t> bits;
    for (const auto& m : train_documents(trainer, corpus.docs, {})) {
      bits.push_back(std::bit_cast<std::uint64_t>(m.loss));
      bits.push_back(std::bit_cast<std::uint64_t>(m.grad_norm));
    }
    const std::vector<double> ratios{0.25, 1.0};
    for (const auto& r : reconstruction_sweep(model, ratios, std::span<const Document>(corpus.docs.data(), 5), 3))
      bits.push_back(std::bit_cast<std::uint64_t>(r.mean_bleu));
    return std::make_pair(bits, serialize_checkpoint(model, corpus.vocab, trainer.steps()));
  };
  const auto [first_metrics, first_ck] = run();
  const auto [second_metrics, second_ck] = run();
  const bool reproducible = first_metrics == second_metrics && first_ck == second_ck;

  // Save, load and compare outputs on a fixed batch.
  AeModel& ae = ae_model();
  const fs::path path = g_out / "ae_checkpoint.bin";
  const Checkpoint ck = read_checkpoint(path.string());
  const NuggetModel loaded = model_from_checkpoint(ck);
  bool same_outputs = ck.vocab.words() == ae.corpus.vocab.words();
  NoGradGuard guard;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& doc = ae.corpus.docs[i];
    const NuggetSet a = ae.model->generate(doc.tokens), b = loaded.generate(doc.tokens);
    const Tensor la = ae.model->decode(a, decoder_inputs_for(doc.tokens), false);
    const Tensor lb = loaded.decode(b, decoder_inputs_for(doc.tokens), false);
    same_outputs &= a.indices == b.indices &&
                    std::equal(la.data().begin(), la.data().end(), lb.data().begin(), lb.data().end());
    same_outputs &= beam_decode(*ae.model, a, 3, 64).tokens == beam_decode(loaded, b, 3, 64).tokens;
  }
  Outcome o;
  o.pass = reproducible && same_outputs;
  o.detail = std::string("rerun ") + (reproducible ? "bit-identical" : "DIFFERS") + " (" +
             std::to_string(first_metrics.size()) + " metric words, checkpoint bytes); reloaded checkpoint " +
             (same_outputs ? "gives identical logits and decodes on 8 docs" : "CHANGES outputs");
  o.metrics = {{"reproducible", reproducible}, {"checkpoint_outputs_identical", same_outputs}};
  return o;
}

Outcome bleu_fixtures() {
  std::ifstream in(std::string(NUGGET_TEST_DATA) + "/bleu_fixtures.json");
  if (!in) return {false, "fixture file missing", {}};
  const auto cases = json::parse(in);
  double worst = 0.0;
  std::size_t count_mismatch = 0;
  for (const auto& c : cases) {
    const auto cand = c.at("candidate").get<std::vector<TokenId>>();
    const auto ref = c.at("reference").get<std::vector<TokenId>>();
    const auto stats = bleu_stats(cand, ref);
    const auto m = c.at("matches").get<std::vector<std::size_t>>();
    const auto t = c.at("totals").get<std::vector<std::size_t>>();
    for (std::size_t n = 0; n < 4; ++n) count_mismatch += stats.matches[n] != m[n] || stats.totals[n] != t[n];
    worst = std::max(worst, std::abs(bleu(cand, ref) - c.at("score").get<double>()));
  }
  Outcome o;
  o.pass = cases.size() >= 10 && worst <= 1e-9 && count_mismatch == 0;
  o.detail = std::to_string(cases.size()) + " cases, max |err| " + fmt(worst) + ", " +
             std::to_string(count_mismatch) + " n-gram count mismatches";
  o.metrics = {{"cases", cases.size()}, {"max_abs_error", worst}};
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--out" && i + 1 < argc) {
      g_out = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: acceptance [--out DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  fs::create_directories(g_out);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"score gradient identity", score_gradient_identity},
      {"selection contract", selection_contract},
      {"frozen-layer immutability", frozen_layers},
      {"desk-scale reconstruction", reconstruction},
      {"selector non-uniformity", selector_nonuniformity},
      {"MaxSim oracle equivalence", maxsim_oracle},
      {"similarity end-to-end", similarity_end_to_end},
      {"LM memory utility", lm_memory_utility},
      {"determinism and persistence", determinism},
      {"BLEU fixture suite", bleu_fixtures},
  };
  json report = json::array();
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.contains(id)) continue;
    const auto started = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what(), {}};
    }
    all &= o.pass;
    std::cout << "criterion " << std::setw(2) << id << ": " << (o.pass ? "PASS" : "FAIL") << "  "
              << criteria[i].first << ": " << o.detail << std::endl;
    report.push_back({{"criterion", id}, {"name", criteria[i].first}, {"pass", o.pass}, {"detail", o.detail},
                      {"seconds", seconds_since(started)}, {"metrics", o.metrics}});
    std::ofstream(g_out / "acceptance_report.json") << report.dump(2) << '\n';
  }
  return all ? 0 : 1;
}
