#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
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

constexpr int kManifestVersion = 1;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

bool deterministic_mode() {
  const char* v = std::getenv("NUGGET_DETERMINISTIC");
  return v && std::string(v) != "0" && std::string(v) != "";
}

std::vector<double> parse_ratios(const std::string& text, const std::string& field) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double r = 0;
    try {
      r = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError(field, "cannot parse '" + item + "' as a number");
    }
    if (used != item.size()) throw ConfigError(field, "cannot parse '" + item + "' as a number");
    check_ratio(r, field);
    out.push_back(r);
  }
  if (out.empty()) throw ConfigError(field, "needs at least one ratio");
  return out;
}

// Run bookkeeping: inputs, outputs, effective config and metrics.
class Run {
 public:
  Run(std::string command, std::vector<std::string> argv, const std::string& out_dir)
      : command_(std::move(command)), argv_(std::move(argv)), dir_(out_dir) {
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }

  void input(const std::string& path) { inputs_[path] = hex64(fnv1a64(read_file(path))); }
  void output(const std::string& name, const std::string& content) {
    write_file(dir_ / name, content);
    outputs_[name] = hex64(fnv1a64(content));
  }
  json& config() { return config_; }
  json& metrics() { return metrics_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  void finish() {
    json m{{"manifest_version", kManifestVersion},
           {"command", command_},
           {"argv", argv_},
           {"config", config_},
           {"seed", seed_},
           {"versions", {{"nugget", NUGGET_VERSION}, {"checkpoint_format", kCheckpointVersion}}},
           {"deterministic", deterministic_mode()},
           {"inputs", inputs_},
           {"outputs", outputs_},
           {"metrics", metrics_}};
    write_file(dir_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  fs::path dir_;
  json config_ = json::object();
  json metrics_ = json::object();
  json inputs_ = json::object();
  json outputs_ = json::object();
  std::uint64_t seed_ = 0;
};

std::vector<Document> documents_from_articles(std::span<const Article> articles, const Vocabulary& vocab,
                                              std::size_t max_tokens, const std::string& prefix) {
  std::vector<Document> docs;
  for (std::size_t a = 0; a < articles.size(); ++a) {
    auto part = concat_documents(articles[a], max_tokens, vocab, prefix + std::to_string(a) + "-");
    docs.insert(docs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return docs;
}

std::vector<TokenId> token_stream(std::span<const Article> articles, const Vocabulary& vocab) {
  std::vector<TokenId> stream;
  for (const auto& a : articles)
    for (const auto& s : a) {
      const auto ids = vocab.encode(s.words);
      stream.insert(stream.end(), ids.begin(), ids.end());
    }
  return stream;
}

Vocabulary vocab_from_file(const std::string& path) {
  return Vocabulary::from_words(json::parse(read_file(path)).get<std::vector<std::string>>());
}

std::string vocab_json(const Vocabulary& vocab) { return json(vocab.words()).dump() + "\n"; }

struct Loaded {
  Checkpoint checkpoint;
  NuggetModel model;
};

Loaded load_model(Run& run, const std::string& path) {
  run.input(path);
  Checkpoint ck = read_checkpoint(path);
  NuggetModel model = model_from_checkpoint(ck);
  run.config()["model"] = to_json(ck.model);
  return {std::move(ck), std::move(model)};
}

std::vector<Document> load_documents(Run& run, const std::string& path, const Vocabulary& vocab, std::size_t max_len,
                                     std::size_t limit) {
  run.input(path);
  const auto articles = read_corpus(path);
  auto docs = documents_from_articles(articles, vocab, max_len - 1, "doc");
  if (limit && docs.size() > limit) docs.resize(limit);
  if (docs.empty()) throw std::runtime_error(path + ": no documents");
  return docs;
}

// ---------------------------------------------------------------- make-data

struct MakeDataArgs {
  std::string kind = "clauses";
  std::string out;
  SyntheticSpec spec;
  std::size_t max_tokens = 64;
  std::size_t sentences_per_section = 2;
  DatasetOptions dataset;
  bool random_negatives = false;
};

int run_make_data(const MakeDataArgs& a, const std::vector<std::string>& argv) {
  Run run("make-data", argv, a.out);
  Rng rng(a.spec.seed);
  SyntheticSpec spec = a.spec;
  DatasetOptions opts = a.dataset;
  opts.use_bm25 = !a.random_negatives;
  if (!(opts.drop_rate >= 0.0 && opts.drop_rate < 1.0)) throw ConfigError("drop_rate", "must lie in [0, 1)");
  if (opts.candidates < 2) throw ConfigError("candidates", "must be at least 2");
  if (spec.min_sentences == 0) throw ConfigError("min_sentences", "must be positive");
  if (spec.max_sentences < spec.min_sentences) throw ConfigError("max_sentences", "must be at least min_sentences");

  const std::string& kind = a.kind;
  if (kind == "clauses" || kind == "copy" || kind == "articles" || kind == "translation") {
    if (kind != "translation") spec.kind = SyntheticSpec::from_json(json{{"kind", kind}}).kind;
    const auto articles = gen_synthetic_corpus(spec, rng);
    run.output("corpus.txt", format_corpus(articles));
    std::vector<std::vector<std::string>> words;
    for (const auto& art : articles)
      for (const auto& s : art) words.push_back(s.words);
    if (kind == "translation") {
      const Lexicon lex = Lexicon::make(spec);
      std::vector<Article> targets;
      for (const auto& art : articles) {
        Article t;
        for (const auto& s : art) t.push_back(transduce_sentence(s, lex));
        targets.push_back(std::move(t));
      }
      run.output("target.txt", format_corpus(targets));
      for (const auto& art : targets)
        for (const auto& s : art) words.push_back(s.words);
    }
    run.output("vocab.json", vocab_json(Vocabulary::build(words)));
  } else if (kind == "pi" || kind == "rr") {
    spec.kind = kind == "pi" ? SyntheticSpec::Kind::clauses : SyntheticSpec::Kind::articles;
    const Lexicon lex = Lexicon::make(spec);
    const std::vector<std::vector<std::string>> lexicon_words{lex.all_words()};
    const Vocabulary vocab = Vocabulary::build(lexicon_words);
    const auto articles = gen_synthetic_corpus(spec, rng);
    std::vector<RankingExample> examples;
    std::vector<Article> training_text = articles;
    if (kind == "pi") {
      const auto pairs = make_document_pairs(articles, lex, vocab, a.max_tokens, rng);
      examples = build_pi_dataset(pairs, rng, opts);
      for (const auto& art : articles) {
        Article para;
        for (const auto& s : art) para.push_back(paraphrase_sentence(s, lex, rng));
        training_text.push_back(std::move(para));
      }
    } else {
      examples = build_rr_dataset(sectionize(articles, vocab, a.sentences_per_section), rng, opts);
    }
    std::ostringstream jsonl;
    for (const auto& ex : examples) jsonl << to_json(ex).dump() << '\n';
    run.output("dataset.jsonl", jsonl.str());
    run.output("corpus.txt", format_corpus(training_text));
    run.output("vocab.json", vocab_json(vocab));
    run.metrics()["examples"] = examples.size();
  } else {
    throw ConfigError("kind", "expected clauses, copy, articles, translation, pi or rr; got '" + kind + "'");
  }
  run.config()["data"] = spec.to_json();
  run.config()["data"]["kind"] = kind;
  run.config()["dataset"] = {{"candidates", opts.candidates},   {"window", opts.window},
                             {"drop_rate", opts.drop_rate},     {"use_bm25", opts.use_bm25},
                             {"max_tokens", a.max_tokens},      {"sentences_per_section", a.sentences_per_section}};
  run.set_seed(spec.seed);
  run.finish();
  std::cout << "wrote " << kind << " data to " << run.dir().string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string out, corpus, target_corpus, vocab, init, config;
  std::size_t log_every = 50;
  std::size_t seg_len = 128, history = 1;
  bool svg = false;
  json model_flags = json::object();
  json train_flags = json::object();
};

int run_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  Run run("train", argv, a.out);
  json file_cfg = json::object();
  if (!a.config.empty()) {
    run.input(a.config);
    file_cfg = json::parse(read_file(a.config));
    if (!file_cfg.is_object()) throw ConfigError("config", "expected a JSON object");
    for (const auto& [key, value] : file_cfg.items())
      if (key != "model" && key != "train") throw ConfigError(key, "unknown section");
  }
  json model_json = file_cfg.value("model", json::object());
  json train_json = file_cfg.value("train", json::object());
  train_json.update(a.train_flags);
  TrainConfig tc = train_config_from_json(train_json);

  std::optional<Checkpoint> init;
  if (!a.init.empty()) {
    run.input(a.init);
    init = read_checkpoint(a.init);
    for (const auto& [key, value] : a.model_flags.items())
      if (key != "ratio") throw ConfigError(key, "cannot change the architecture of an initial checkpoint");
  }
  model_json.update(a.model_flags);

  Vocabulary vocab;
  run.input(a.corpus);
  const auto articles = read_corpus(a.corpus);
  if (init) {
    vocab = init->vocab;
  } else if (!a.vocab.empty()) {
    run.input(a.vocab);
    vocab = vocab_from_file(a.vocab);
  } else {
    std::vector<std::vector<std::string>> words;
    for (const auto& art : articles)
      for (const auto& s : art) words.push_back(s.words);
    if (!a.target_corpus.empty())
      for (const auto& art : read_corpus(a.target_corpus))
        for (const auto& s : art) words.push_back(s.words);
    vocab = Vocabulary::build(words);
  }

  ModelConfig mc;
  if (init) {
    mc = init->model;
    if (model_json.contains("ratio")) {
      json j = to_json(mc);
      j["ratio"] = model_json.at("ratio");
      mc = model_config_from_json(j);
    }
  } else {
    model_json["vocab_size"] = vocab.size();
    mc = model_config_from_json(model_json);
  }
  mc.validate();
  tc.validate(mc);

  NuggetModel model(mc);
  if (init) {
    Checkpoint ck = *init;
    ck.model = mc;
    model = model_from_checkpoint(ck);
  }
  model.set_punctuation(vocab.punctuation_ids());
  run.config()["model"] = to_json(mc);
  run.config()["train"] = to_json(tc);
  run.set_seed(tc.seed);

  Trainer trainer(model, tc);
  std::ostringstream csv;
  csv << "step,loss,grad_norm,tokens\n";
  csv.precision(17);
  std::vector<double> losses;
  const auto started = std::chrono::steady_clock::now();
  auto log = [&](const TrainMetrics& m) {
    csv << m.step << ',' << m.loss << ',' << m.grad_norm << ',' << m.tokens << '\n';
    losses.push_back(m.loss);
    if (a.log_every && m.step % a.log_every == 0)
      std::cerr << "step " << m.step << " loss " << m.loss << " grad_norm " << m.grad_norm << "\n";
  };

  if (tc.objective == Objective::language_model) {
    if (a.seg_len + 1 > mc.max_len) throw ConfigError("seg_len", "must be below max_len");
    LmTrainOptions opts;
    opts.seg_len = a.seg_len;
    opts.history = a.history;
    opts.ratio = mc.ratio;
    train_lm(trainer, token_stream(articles, vocab), opts, log);
    run.config()["lm"] = {{"seg_len", a.seg_len}, {"history", a.history}};
  } else {
    auto sources = documents_from_articles(articles, vocab, mc.max_len - 1, "doc");
    std::vector<Document> targets;
    if (tc.objective == Objective::translate) {
      if (a.target_corpus.empty()) throw ConfigError("target_corpus", "required for the MT objective");
      run.input(a.target_corpus);
      const auto target_articles = read_corpus(a.target_corpus);
      if (target_articles.size() != articles.size())
        throw std::runtime_error("source and target corpora have different article counts");
      sources.clear();
      for (std::size_t i = 0; i < articles.size(); ++i) {
        sources.push_back(make_document("src" + std::to_string(i), articles[i], vocab));
        targets.push_back(make_document("tgt" + std::to_string(i), target_articles[i], vocab));
        if (sources.back().size() + 1 > mc.max_len || targets.back().size() + 1 > mc.max_len)
          throw std::runtime_error("translation pair " + std::to_string(i) + " exceeds max_len");
      }
    }
    if (sources.empty()) throw std::runtime_error(a.corpus + ": no documents");
    train_documents(trainer, sources, targets, log);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  const std::string bytes = serialize_checkpoint(model, vocab, trainer.steps());
  run.output("checkpoint.bin", bytes);
  run.output("metrics.csv", csv.str());
  run.output("vocab.json", vocab_json(vocab));
  if (a.svg && !losses.empty()) {
    std::vector<double> xs(losses.size());
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(i + 1);
    run.output("loss.svg", svg_line_chart(xs, losses, "training loss", "step", "loss"));
  }
  run.metrics() = {{"steps", trainer.steps()},
                   {"final_loss", losses.empty() ? 0.0 : losses.back()},
                   {"frozen", trainer.frozen()}};
  run.finish();
  std::cerr << "trained " << trainer.steps() << " steps in " << seconds << " s\n";
  return 0;
}

// ---------------------------------------------------------------- reconstruct

struct ReconstructArgs {
  std::string out, checkpoint, corpus, ratios = "0.05,0.1,0.15,0.25";
  std::size_t beam = 5, limit = 0;
  bool svg = false;
};

int run_reconstruct(const ReconstructArgs& a, const std::vector<std::string>& argv) {
  const auto ratios = parse_ratios(a.ratios, "ratios");
  if (a.beam == 0) throw ConfigError("beam", "must be positive");
  Run run("reconstruct", argv, a.out);
  auto [ck, model] = load_model(run, a.checkpoint);
  const auto docs = load_documents(run, a.corpus, ck.vocab, model.config().max_len, a.limit);
  const auto rows = reconstruction_sweep(model, ratios, docs, a.beam);
  run.output("sweep.csv", sweep_csv(rows));
  run.output("sweep.json", sweep_json(rows).dump(2) + "\n");
  if (a.svg) {
    std::vector<double> ys;
    for (const auto& r : rows) ys.push_back(r.mean_bleu);
    run.output("sweep.svg", svg_line_chart(ratios, ys, "reconstruction BLEU", "r", "BLEU"));
  }
  run.config()["reconstruct"] = {{"ratios", ratios}, {"beam", a.beam}, {"limit", a.limit}};
  run.metrics() = sweep_json(rows);
  run.finish();
  std::cout << sweep_csv(rows);
  return 0;
}

// ---------------------------------------------------------------- probe

struct ProbeArgs {
  std::string out, checkpoint, corpus, what = "all";
  std::size_t limit = 0, top = 20;
  int radius = 10;
  std::optional<double> ratio;
  bool svg = false;
};

int run_probe(const ProbeArgs& a, const std::vector<std::string>& argv) {
  if (a.what != "all" && a.what != "tokens" && a.what != "gain")
    throw ConfigError("what", "expected all, tokens or gain");
  if (a.radius < 0) throw ConfigError("radius", "must be non-negative");
  Run run("probe", argv, a.out);
  auto [ck, model] = load_model(run, a.checkpoint);
  if (a.ratio) {
    check_ratio(*a.ratio);
    model.mutable_config().ratio = *a.ratio;
  }
  const auto docs = load_documents(run, a.corpus, ck.vocab, model.config().max_len, a.limit);
  if (a.what != "gain") {
    const auto report = nugget_token_stats(model, docs, ck.vocab);
    run.output("token_stats.csv", token_stats_csv(report));
    const json j = token_stats_json(report, a.top);
    run.output("token_stats.json", j.dump(2) + "\n");
    run.metrics()["token_stats"] = j;
    if (a.svg) {
      std::vector<std::string> labels;
      std::vector<double> nug, corp;
      for (std::size_t i = 0; i < std::min(a.top, report.rows.size()); ++i) {
        labels.push_back(report.rows[i].word);
        nug.push_back(report.rows[i].nugget_freq);
        corp.push_back(report.rows[i].corpus_freq);
      }
      run.output("token_stats.svg", svg_bar_chart(labels, nug, corp, "selected token types", "nugget", "corpus"));
    }
  }
  if (a.what != "tokens") {
    const auto profile = probability_gain_profile(model, docs, a.radius);
    run.output("gain_profile.csv", gain_profile_csv(profile));
    const json j = gain_profile_json(profile);
    run.output("gain_profile.json", j.dump(2) + "\n");
    run.metrics()["gain_profile"] = j;
    if (a.svg) {
      std::vector<double> xs(profile.offsets.begin(), profile.offsets.end());
      run.output("gain_profile.svg", svg_line_chart(xs, profile.mean_gain, "probability gain", "offset", "gain"));
    }
  }
  run.config()["probe"] = {{"what", a.what}, {"radius", a.radius}, {"limit", a.limit}, {"ratio", model.config().ratio}};
  run.finish();
  return 0;
}

// ---------------------------------------------------------------- similarity-eval

struct SimilarityArgs {
  std::string out, checkpoint, dataset, scorer = "maxsim-mean";
  std::size_t limit = 0;
  std::optional<double> ratio;
};

int run_similarity(const SimilarityArgs& a, const std::vector<std::string>& argv) {
  SimilarityScorer scorer;
  try {
    scorer = similarity_scorer_from_string(a.scorer);
  } catch (const std::exception& e) {
    throw ConfigError("scorer", e.what());
  }
  Run run("similarity-eval", argv, a.out);
  auto [ck, model] = load_model(run, a.checkpoint);
  if (a.ratio) {
    check_ratio(*a.ratio);
    model.mutable_config().ratio = *a.ratio;
  }
  run.input(a.dataset);
  auto examples = read_jsonl(a.dataset, ck.vocab);
  if (a.limit && examples.size() > a.limit) examples.resize(a.limit);
  const auto ranked = evaluate_ranking(model, examples, scorer);
  std::ostringstream csv;
  csv << "example,gold_index,gold_rank\n";
  std::vector<std::size_t> ranks;
  for (const auto& r : ranked) {
    csv << r.example << ',' << r.gold_index << ',' << r.gold_rank << '\n';
    ranks.push_back(r.gold_rank);
  }
  const json summary{{"scorer", to_string(scorer)}, {"examples", ranked.size()}, {"mrr", mrr(ranks)}};
  run.output("ranks.csv", csv.str());
  run.output("summary.json", summary.dump(2) + "\n");
  run.config()["similarity"] = {{"scorer", to_string(scorer)}, {"limit", a.limit}, {"ratio", model.config().ratio}};
  run.metrics() = summary;
  run.finish();
  std::cout << summary.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------- lm-eval

struct LmEvalArgs {
  std::string out, checkpoint, corpus;
  std::size_t seg_len = 128, history = 1;
  std::optional<double> ratio;
};

int run_lm_eval(const LmEvalArgs& a, const std::vector<std::string>& argv) {
  Run run("lm-eval", argv, a.out);
  auto [ck, model] = load_model(run, a.checkpoint);
  const double ratio = a.ratio.value_or(model.config().ratio);
  check_ratio(ratio);
  if (a.seg_len == 0 || a.seg_len + 1 > model.config().max_len) throw ConfigError("seg_len", "must lie in [1, max_len)");
  run.input(a.corpus);
  const auto stream = token_stream(read_corpus(a.corpus), ck.vocab);
  const auto r = perplexity(model, stream, a.seg_len, a.history, ratio);
  const json cfg{{"seg_len", a.seg_len}, {"history", a.history}, {"ratio", ratio}};
  const json result{{"ppl", r.perplexity}, {"mean_nll", r.mean_nll}, {"tokens", r.tokens},
                    {"segments", r.segments}, {"config", cfg}};
  run.output("lm.json", result.dump(2) + "\n");
  run.config()["lm"] = cfg;
  run.metrics() = result;
  run.finish();
  std::cout << result.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::string out;
  std::size_t configs = 10, cases = 20;
  std::uint64_t seed = 0;
  double identity_tol = 1e-8, primitive_tol = 1e-4;
};

int run_gradcheck(const GradcheckArgs& a, const std::vector<std::string>& argv) {
  Run run("gradcheck", argv, a.out);
  Rng rng(a.seed);
  double deviation = 0.0;
  json identity = json::array();
  for (std::size_t c = 0; c < a.configs; ++c) {
    ModelConfig mc;
    mc.vocab_size = 20 + rng.below(20);
    mc.heads = 1 + rng.below(3);
    mc.d_model = mc.heads * (2 + rng.below(4));
    mc.d_ff = 2 * mc.d_model;
    mc.encoder_layers = 1 + rng.below(3);
    mc.decoder_layers = 1 + rng.below(3);
    mc.scorer_layer = rng.below(mc.encoder_layers + 1);
    mc.ratio = 0.1 + 0.9 * rng.uniform();
    mc.max_len = 64;
    mc.seed = rng.next_u64();
    NuggetModel model(mc);
    std::vector<TokenId> tokens(3 + rng.below(20));
    for (auto& t : tokens) t = static_cast<TokenId>(4 + rng.below(mc.vocab_size - 4));
    const auto check = check_score_gradient(model, tokens);
    deviation = std::max(deviation, check.max_abs_deviation);
    identity.push_back({{"config", to_json(mc)}, {"tokens", tokens.size()},
                        {"max_abs_deviation", check.max_abs_deviation}, {"max_abs_gradient", check.max_abs_gradient}});
  }
  std::cout << "score gradient identity: max deviation " << deviation << " over " << a.configs << " configurations\n";
  double worst = 0.0;
  json prims = json::array();
  for (const auto& p : check_primitives(a.cases, a.seed)) {
    worst = std::max(worst, p.max_relative_error);
    prims.push_back({{"name", p.name}, {"cases", p.cases}, {"max_relative_error", p.max_relative_error}});
    std::cout << "  " << p.name << ": " << p.cases << " cases, max rel err " << p.max_relative_error << "\n";
  }
  std::cout << "finite differences: worst rel err " << worst << "\n";
  const bool ok = deviation <= a.identity_tol && worst <= a.primitive_tol;
  const json result{{"identity_max_deviation", deviation}, {"identity", identity}, {"primitives", prims},
                    {"worst_relative_error", worst}, {"passed", ok}};
  run.output("gradcheck.json", result.dump(2) + "\n");
  run.config()["gradcheck"] = {{"configs", a.configs}, {"cases", a.cases}, {"identity_tol", a.identity_tol},
                               {"primitive_tol", a.primitive_tol}};
  run.set_seed(a.seed);
  run.metrics() = {{"identity_max_deviation", deviation}, {"worst_relative_error", worst}, {"passed", ok}};
  run.finish();
  return ok ? 0 : 1;
}

int dispatch(int argc, char** argv);

// ---------------------------------------------------------------- replay

int run_replay(const std::string& manifest_path, const std::string& out) {
  const json m = json::parse(read_file(manifest_path));
  auto args = m.at("argv").get<std::vector<std::string>>();
  bool replaced = false;
  for (std::size_t i = 0; i + 1 < args.size(); ++i)
    if (args[i] == "--out") {
      args[i + 1] = out;
      replaced = true;
    }
  if (!replaced) throw std::runtime_error("manifest argv has no --out");
  std::vector<char*> ptrs;
  for (auto& s : args) ptrs.push_back(s.data());
  const int code = dispatch(static_cast<int>(ptrs.size()), ptrs.data());
  if (code != 0) return code;
  const json again = json::parse(read_file((fs::path(out) / "manifest.json").string()));
  bool same = true;
  for (const auto& [name, hash] : m.at("outputs").items()) {
    const bool match = again.at("outputs").value(name, "") == hash.get<std::string>();
    std::cout << (match ? "same     " : "DIFFERS  ") << name << "\n";
    same &= match;
  }
  return same ? 0 : 1;
}

int dispatch(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Nugget text-encoding toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", NUGGET_VERSION);

  MakeDataArgs md;
  auto* make_data = app.add_subcommand("make-data", "generate synthetic corpora and ranking datasets");
  make_data->add_option("--kind", md.kind, "clauses, copy, articles, translation, pi or rr")->capture_default_str();
  make_data->add_option("--out", md.out, "output directory")->required();
  make_data->add_option("--documents", md.spec.documents, "articles (or copy segments)")->capture_default_str();
  make_data->add_option("--min-sentences", md.spec.min_sentences)->capture_default_str();
  make_data->add_option("--max-sentences", md.spec.max_sentences)->capture_default_str();
  make_data->add_option("--nouns", md.spec.nouns)->capture_default_str();
  make_data->add_option("--verbs", md.spec.verbs)->capture_default_str();
  make_data->add_option("--adjectives", md.spec.adjectives)->capture_default_str();
  make_data->add_option("--sections", md.spec.sections)->capture_default_str();
  make_data->add_option("--seg-len", md.spec.seg_len, "copy corpus segment length")->capture_default_str();
  make_data->add_option("--seed", md.spec.seed)->capture_default_str();
  make_data->add_option("--max-tokens", md.max_tokens, "document length budget for pi pairs")->capture_default_str();
  make_data->add_option("--sentences-per-section", md.sentences_per_section)->capture_default_str();
  make_data->add_option("--candidates", md.dataset.candidates)->capture_default_str();
  make_data->add_option("--window", md.dataset.window)->capture_default_str();
  make_data->add_option("--drop-rate", md.dataset.drop_rate)->capture_default_str();
  make_data->add_flag("--random-negatives", md.random_negatives, "draw negatives at random instead of BM25");

  TrainArgs tr;
  std::string objective, selector, ratio_mix;
  double ratio = 0, lr = 0, noise = 0, null_rate = 0, clip = 0;
  std::size_t scorer_layer = 0, d_model = 0, heads = 0, enc = 0, dec = 0, d_ff = 0, max_len = 0;
  std::size_t freeze = 0, batch = 0, steps = 0;
  std::uint64_t seed = 0;
  bool feedback = true, bias_path = true, bias_inference = true;
  auto* train = app.add_subcommand("train", "train an AE, MT or LM model");
  train->add_option("--out", tr.out)->required();
  train->add_option("--corpus", tr.corpus, "source corpus (one sentence per line)")->required()->check(CLI::ExistingFile);
  train->add_option("--target-corpus", tr.target_corpus, "article-aligned target corpus for MT")->check(CLI::ExistingFile);
  train->add_option("--vocab", tr.vocab, "vocabulary JSON (word list)")->check(CLI::ExistingFile);
  train->add_option("--init", tr.init, "start from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--config", tr.config, "JSON config with model and train sections")->check(CLI::ExistingFile);
  auto* o_ratio = train->add_option("--ratio", ratio, "compression ratio r");
  auto* o_layer = train->add_option("--scorer-layer", scorer_layer, "encoder layer l feeding the scorer");
  auto* o_feedback = train->add_option("--feedback", feedback, "add nugget/other type embeddings (true|false)");
  auto* o_bias = train->add_option("--bias-path", bias_path, "inject scores into cross-attention (true|false)");
  auto* o_bias_inf = train->add_option("--bias-at-inference", bias_inference);
  auto* o_selector = train->add_option("--selector", selector, "learned, chunking or sentence");
  auto* o_d = train->add_option("--d-model", d_model);
  auto* o_heads = train->add_option("--heads", heads);
  auto* o_enc = train->add_option("--encoder-layers", enc);
  auto* o_dec = train->add_option("--decoder-layers", dec);
  auto* o_ff = train->add_option("--d-ff", d_ff);
  auto* o_len = train->add_option("--max-len", max_len);
  auto* o_objective = train->add_option("--objective", objective, "AE, MT or LM");
  auto* o_freeze = train->add_option("--freeze-below", freeze);
  auto* o_lr = train->add_option("--lr", lr);
  auto* o_noise = train->add_option("--noise", noise, "AE token deletion rate");
  auto* o_null = train->add_option("--null-memory-rate", null_rate);
  auto* o_clip = train->add_option("--clip-norm", clip);
  auto* o_batch = train->add_option("--batch-size", batch);
  auto* o_steps = train->add_option("--steps", steps);
  auto* o_mix = train->add_option("--ratio-mix", ratio_mix, "comma-separated ratios drawn per example");
  auto* o_seed = train->add_option("--seed", seed);
  train->add_option("--seg-len", tr.seg_len, "LM segment length")->capture_default_str();
  train->add_option("--history", tr.history, "LM memory segments")->capture_default_str();
  train->add_option("--log-every", tr.log_every)->capture_default_str();
  train->add_flag("--svg", tr.svg, "also write an SVG loss curve");

  ReconstructArgs rc;
  auto* reconstruct = app.add_subcommand("reconstruct", "reconstruction BLEU across compression ratios");
  reconstruct->add_option("--out", rc.out)->required();
  reconstruct->add_option("--checkpoint", rc.checkpoint)->required()->check(CLI::ExistingFile);
  reconstruct->add_option("--corpus", rc.corpus)->required()->check(CLI::ExistingFile);
  reconstruct->add_option("--ratios", rc.ratios)->capture_default_str();
  reconstruct->add_option("--beam", rc.beam)->capture_default_str();
  reconstruct->add_option("--limit", rc.limit, "evaluate at most this many documents");
  reconstruct->add_flag("--svg", rc.svg);

  ProbeArgs pb;
  auto* probe = app.add_subcommand("probe", "selected-token statistics and probability gain");
  probe->add_option("--out", pb.out)->required();
  probe->add_option("--checkpoint", pb.checkpoint)->required()->check(CLI::ExistingFile);
  probe->add_option("--corpus", pb.corpus)->required()->check(CLI::ExistingFile);
  probe->add_option("--what", pb.what, "all, tokens or gain")->capture_default_str();
  probe->add_option("--radius", pb.radius)->capture_default_str();
  probe->add_option("--limit", pb.limit);
  probe->add_option("--top", pb.top)->capture_default_str();
  probe->add_option("--ratio", pb.ratio);
  probe->add_flag("--svg", pb.svg);

  SimilarityArgs sm;
  auto* similarity = app.add_subcommand("similarity-eval", "rank candidates and report MRR");
  similarity->add_option("--out", sm.out)->required();
  similarity->add_option("--checkpoint", sm.checkpoint)->required()->check(CLI::ExistingFile);
  similarity->add_option("--dataset", sm.dataset)->required()->check(CLI::ExistingFile);
  similarity->add_option("--scorer", sm.scorer, "maxsim-mean, maxsim-max or mean-pool")->capture_default_str();
  similarity->add_option("--limit", sm.limit);
  similarity->add_option("--ratio", sm.ratio);

  LmEvalArgs lm;
  auto* lm_eval = app.add_subcommand("lm-eval", "segment-memory perplexity");
  lm_eval->add_option("--out", lm.out)->required();
  lm_eval->add_option("--checkpoint", lm.checkpoint)->required()->check(CLI::ExistingFile);
  lm_eval->add_option("--corpus", lm.corpus)->required()->check(CLI::ExistingFile);
  lm_eval->add_option("--seg-len", lm.seg_len)->capture_default_str();
  lm_eval->add_option("--history", lm.history)->capture_default_str();
  lm_eval->add_option("--ratio", lm.ratio);

  GradcheckArgs gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "score-gradient identity and finite-difference suite");
  gradcheck->add_option("--out", gc.out)->required();
  gradcheck->add_option("--configs", gc.configs)->capture_default_str();
  gradcheck->add_option("--cases", gc.cases)->capture_default_str();
  gradcheck->add_option("--seed", gc.seed)->capture_default_str();

  std::string manifest, replay_out;
  auto* replay = app.add_subcommand("replay", "re-run a manifest and compare every output hash");
  replay->add_option("manifest", manifest)->required()->check(CLI::ExistingFile);
  replay->add_option("--out", replay_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (*train) {
    auto put = [](json& j, CLI::Option* opt, const char* key, auto value) {
      if (opt->count()) j[key] = value;
    };
    json& m = tr.model_flags;
    put(m, o_ratio, "ratio", ratio);
    put(m, o_layer, "scorer_layer", scorer_layer);
    put(m, o_feedback, "feedback", feedback);
    put(m, o_bias, "bias_path", bias_path);
    put(m, o_bias_inf, "use_bias_at_inference", bias_inference);
    put(m, o_selector, "selector", selector);
    put(m, o_d, "d_model", d_model);
    put(m, o_heads, "heads", heads);
    put(m, o_enc, "encoder_layers", enc);
    put(m, o_dec, "decoder_layers", dec);
    put(m, o_ff, "d_ff", d_ff);
    put(m, o_len, "max_len", max_len);
    put(m, o_seed, "seed", seed);
    json& t = tr.train_flags;
    put(t, o_objective, "objective", objective);
    put(t, o_freeze, "freeze_below", freeze);
    put(t, o_lr, "learn_rate", lr);
    put(t, o_noise, "noise_rate", noise);
    put(t, o_null, "null_memory_rate", null_rate);
    put(t, o_clip, "clip_norm", clip);
    put(t, o_batch, "batch_size", batch);
    put(t, o_steps, "max_steps", steps);
    put(t, o_seed, "seed", seed);
    if (o_mix->count()) t["ratio_mix"] = parse_ratios(ratio_mix, "ratio_mix");
    return run_train(tr, args);
  }
  if (*make_data) return run_make_data(md, args);
  if (*reconstruct) return run_reconstruct(rc, args);
  if (*probe) return run_probe(pb, args);
  if (*similarity) return run_similarity(sm, args);
  if (*lm_eval) return run_lm_eval(lm, args);
  if (*gradcheck) return run_gradcheck(gc, args);
  if (*replay) return run_replay(manifest, replay_out);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  if (deterministic_mode()) Eigen::setNbThreads(1);
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
