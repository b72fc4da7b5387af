#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nugget/gradcheck.hpp"
#include "nugget/inference.hpp"
#include "nugget/lm.hpp"
#include "nugget/similarity.hpp"
#include "nugget/training.hpp"

namespace py = pybind11;
using namespace nugget;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

VectorSet to_vectors(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array of row vectors");
  VectorSet s;
  s.rows = static_cast<std::size_t>(a.shape(0));
  s.dim = static_cast<std::size_t>(a.shape(1));
  s.values.assign(a.data(), a.data() + a.size());
  return s;
}

std::vector<Sentence> to_sentences(const std::vector<std::vector<std::string>>& words) {
  std::vector<Sentence> out;
  for (const auto& w : words) out.push_back(Sentence{w});
  return out;
}

py::dict sweep_row(const SweepRow& r) {
  py::dict d;
  d["ratio"] = r.ratio;
  d["mean_bleu"] = r.mean_bleu;
  d["corpus_bleu"] = r.corpus_bleu;
  d["mean_nuggets"] = r.mean_nuggets;
  d["documents"] = r.documents;
  d["tokens"] = r.tokens;
  return d;
}

}  // namespace

PYBIND11_MODULE(pynugget, m) {
  m.doc() = "Nugget text encoder: selection, training, decoding, similarity and segment-memory LM";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NonFiniteLoss>(m, "NonFiniteLoss", PyExc_ArithmeticError);

  m.def("compute_k", &compute_k, py::arg("n"), py::arg("ratio"));

  py::enum_<SelectorKind>(m, "Selector")
      .value("learned", SelectorKind::learned)
      .value("chunking", SelectorKind::chunking)
      .value("sentence", SelectorKind::sentence);
  py::enum_<Objective>(m, "Objective")
      .value("AE", Objective::autoencode)
      .value("MT", Objective::translate)
      .value("LM", Objective::language_model);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("encoder_layers", &ModelConfig::encoder_layers)
      .def_readwrite("decoder_layers", &ModelConfig::decoder_layers)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("max_len", &ModelConfig::max_len)
      .def_readwrite("scorer_layer", &ModelConfig::scorer_layer)
      .def_readwrite("ratio", &ModelConfig::ratio)
      .def_readwrite("feedback", &ModelConfig::feedback)
      .def_readwrite("bias_path", &ModelConfig::bias_path)
      .def_readwrite("use_bias_at_inference", &ModelConfig::use_bias_at_inference)
      .def_readwrite("position_embeddings", &ModelConfig::position_embeddings)
      .def_readwrite("selector", &ModelConfig::selector)
      .def_readwrite("seed", &ModelConfig::seed)
      .def("validate", &ModelConfig::validate)
      .def("to_json", [](const ModelConfig& c) { return to_json(c).dump(); })
      .def_static("from_json", [](const std::string& s) { return model_config_from_json(nlohmann::json::parse(s)); });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("objective", &TrainConfig::objective)
      .def_readwrite("freeze_below", &TrainConfig::freeze_below)
      .def_readwrite("learn_rate", &TrainConfig::learn_rate)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm)
      .def_readwrite("noise_rate", &TrainConfig::noise_rate)
      .def_readwrite("null_memory_rate", &TrainConfig::null_memory_rate)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("max_steps", &TrainConfig::max_steps)
      .def_readwrite("ratio_mix", &TrainConfig::ratio_mix)
      .def_readwrite("seed", &TrainConfig::seed)
      .def("to_json", [](const TrainConfig& c) { return to_json(c).dump(); });

  py::class_<Vocabulary>(m, "Vocabulary")
      .def_static("build", [](const std::vector<std::vector<std::string>>& corpus,
                              std::size_t min_count) { return Vocabulary::build(corpus, min_count); },
                  py::arg("sentences"), py::arg("min_count") = 1)
      .def("__len__", &Vocabulary::size)
      .def("id", &Vocabulary::id)
      .def("word", &Vocabulary::word)
      .def("encode", [](const Vocabulary& v, const std::vector<std::string>& w) { return v.encode(w); })
      .def("decode", [](const Vocabulary& v, const std::vector<TokenId>& ids) { return v.decode(ids); })
      .def("words", &Vocabulary::words)
      .def("punctuation_ids", &Vocabulary::punctuation_ids);

  py::class_<Document>(m, "Document")
      .def_readonly("doc_id", &Document::doc_id)
      .def_readonly("text", &Document::text)
      .def_readonly("tokens", &Document::tokens)
      .def_readonly("sentence_ends", &Document::sentence_ends)
      .def("__len__", &Document::size);

  m.def("make_document", [](const std::string& id, const std::vector<std::vector<std::string>>& sentences,
                            const Vocabulary& vocab) { return make_document(id, to_sentences(sentences), vocab); },
        py::arg("doc_id"), py::arg("sentences"), py::arg("vocab"));

  m.def("split_words", &split_words);

  m.def(
      "synthetic_corpus",
      [](const std::string& kind, std::size_t documents, std::uint64_t seed, std::size_t min_sentences,
         std::size_t max_sentences, std::size_t seg_len) {
        SyntheticSpec spec = SyntheticSpec::from_json(nlohmann::json{{"kind", kind}});
        spec.documents = documents;
        spec.seed = seed;
        spec.min_sentences = min_sentences;
        spec.max_sentences = max_sentences;
        spec.seg_len = seg_len;
        Rng rng(seed);
        std::vector<std::vector<std::vector<std::string>>> out;
        for (const auto& article : gen_synthetic_corpus(spec, rng)) {
          out.emplace_back();
          for (const auto& s : article) out.back().push_back(s.words);
        }
        return out;
      },
      py::arg("kind") = "clauses", py::arg("documents") = 100, py::arg("seed") = 0, py::arg("min_sentences") = 2,
      py::arg("max_sentences") = 4, py::arg("seg_len") = 32,
      "Articles as lists of sentences, each a list of words.");

  py::class_<NuggetSet>(m, "NuggetSet")
      .def_readonly("indices", &NuggetSet::indices)
      .def_readonly("k", &NuggetSet::k)
      .def_readonly("ratio", &NuggetSet::ratio)
      .def_property_readonly("vectors", [](const NuggetSet& s) { return to_numpy(s.vectors); })
      .def_property_readonly("scores", [](const NuggetSet& s) { return to_numpy(s.selected_scores); })
      .def_property_readonly("token_scores", [](const NuggetSet& s) { return to_numpy(s.token_scores); });

  py::class_<NuggetModel>(m, "NuggetModel")
      .def(py::init<const ModelConfig&>())
      .def_property_readonly("config", &NuggetModel::config)
      .def(
          "generate",
          [](const NuggetModel& model, const std::vector<TokenId>& tokens, std::optional<double> ratio,
             const Document* doc) {
            NoGradGuard guard;
            return model.generate(tokens, doc, ratio);
          },
          py::arg("tokens"), py::arg("ratio") = py::none(), py::arg("document") = nullptr)
      .def("set_punctuation", &NuggetModel::set_punctuation)
      .def("freeze_encoder_below", &NuggetModel::freeze_encoder_below)
      .def("parameter_names",
           [](const NuggetModel& model) {
             std::vector<std::string> names;
             for (const auto& p : model.parameters()) names.push_back(p.name);
             return names;
           })
      .def("parameter", [](const NuggetModel& model, const std::string& name) {
        for (const auto& p : model.parameters())
          if (p.name == name) return to_numpy(p.tensor);
        throw py::key_error(name);
      });

  py::class_<Trainer>(m, "Trainer")
      .def(py::init<NuggetModel&, const TrainConfig&>(), py::keep_alive<1, 2>())
      .def_property_readonly("steps", &Trainer::steps)
      .def_property_readonly("frozen", &Trainer::frozen)
      .def(
          "train_documents",
          [](Trainer& trainer, const std::vector<Document>& sources, const std::vector<Document>& targets) {
            std::vector<double> losses;
            for (const auto& m : train_documents(trainer, sources, targets)) losses.push_back(m.loss);
            return losses;
          },
          py::arg("sources"), py::arg("targets") = std::vector<Document>{})
      .def(
          "train_lm",
          [](Trainer& trainer, const std::vector<TokenId>& stream, std::size_t seg_len, std::size_t history,
             double ratio) {
            LmTrainOptions opts{seg_len, history, ratio};
            std::vector<double> losses;
            for (const auto& m : train_lm(trainer, stream, opts)) losses.push_back(m.loss);
            return losses;
          },
          py::arg("stream"), py::arg("seg_len") = 128, py::arg("history") = 1, py::arg("ratio") = 0.25);

  m.def("teacher_forced_accuracy", [](const NuggetModel& model, const std::vector<Document>& docs) {
    return teacher_forced_accuracy(model, docs);
  });

  m.def(
      "beam_decode",
      [](const NuggetModel& model, const std::vector<TokenId>& tokens, std::optional<double> ratio,
         std::size_t width, std::size_t max_len) {
        NoGradGuard guard;
        const NuggetSet set = model.generate(tokens, nullptr, ratio);
        const DecodeResult r = beam_decode(model, set, width, max_len);
        return py::make_tuple(r.tokens, r.log_prob, r.finished);
      },
      py::arg("model"), py::arg("tokens"), py::arg("ratio") = py::none(), py::arg("width") = 5,
      py::arg("max_len") = 256, "Reconstruct `tokens` from their nuggets: (tokens, log_prob, finished).");

  m.def("bleu", [](const std::vector<TokenId>& c, const std::vector<TokenId>& r) { return bleu(c, r); },
        py::arg("candidate"), py::arg("reference"));

  m.def(
      "reconstruction_sweep",
      [](const NuggetModel& model, const std::vector<double>& ratios, const std::vector<Document>& docs,
         std::size_t beam) {
        py::list rows;
        for (const auto& r : reconstruction_sweep(model, ratios, docs, beam)) rows.append(sweep_row(r));
        return rows;
      },
      py::arg("model"), py::arg("ratios"), py::arg("documents"), py::arg("beam") = 5);

  m.def("maxsim_mean", [](py::array_t<double> q, py::array_t<double> d) {
    return maxsim_mean(to_vectors(q), to_vectors(d));
  });
  m.def("maxsim_max", [](py::array_t<double> q, py::array_t<double> d) {
    return maxsim_max(to_vectors(q), to_vectors(d));
  });
  m.def("mean_pool_cosine", [](py::array_t<double> q, py::array_t<double> d) {
    return mean_pool_cosine(to_vectors(q), to_vectors(d));
  });
  m.def("rank_candidates", [](const std::vector<double>& scores, std::size_t gold) {
    const Ranking r = rank_candidates(scores, gold);
    return py::make_tuple(r.order, r.gold_rank);
  });
  m.def("mrr", [](const std::vector<std::size_t>& ranks) { return mrr(ranks); });

  m.def(
      "perplexity",
      [](const NuggetModel& model, const std::vector<TokenId>& stream, std::size_t seg_len, std::size_t history,
         double ratio) {
        const auto r = perplexity(model, stream, seg_len, history, ratio);
        py::dict d;
        d["ppl"] = r.perplexity;
        d["mean_nll"] = r.mean_nll;
        d["tokens"] = r.tokens;
        d["segments"] = r.segments;
        return d;
      },
      py::arg("model"), py::arg("stream"), py::arg("seg_len") = 128, py::arg("history") = 1,
      py::arg("ratio") = 0.25);

  m.def("check_score_gradient", [](const NuggetModel& model, const std::vector<TokenId>& tokens) {
    const auto c = check_score_gradient(model, tokens);
    py::dict d;
    d["max_abs_deviation"] = c.max_abs_deviation;
    d["max_abs_gradient"] = c.max_abs_gradient;
    d["compared"] = c.compared;
    d["max_scorer_gradient"] = c.max_scorer_gradient;
    return d;
  });

  m.def(
      "check_primitives",
      [](std::size_t cases, std::uint64_t seed) {
        py::list out;
        for (const auto& p : check_primitives(cases, seed)) out.append(py::make_tuple(p.name, p.cases, p.max_relative_error));
        return out;
      },
      py::arg("cases") = 20, py::arg("seed") = 0);

  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("model"), py::arg("vocab"), py::arg("step") = 0);
  m.def("load_checkpoint", [](const std::string& path) {
    Checkpoint ck = read_checkpoint(path);
    NuggetModel model = model_from_checkpoint(ck);
    return py::make_tuple(std::move(model), ck.vocab, ck.step);
  });
}
