#include "nugget/config.hpp"

#include <cmath>
#include <set>

namespace nugget {

using nlohmann::json;

std::string to_string(SelectorKind kind) {
  switch (kind) {
    case SelectorKind::learned: return "learned";
    case SelectorKind::chunking: return "chunking";
    case SelectorKind::sentence: return "sentence";
  }
  return "learned";
}

std::string to_string(Objective objective) {
  switch (objective) {
    case Objective::autoencode: return "AE";
    case Objective::translate: return "MT";
    case Objective::language_model: return "LM";
  }
  return "AE";
}

SelectorKind selector_from_string(const std::string& name) {
  if (name == "learned") return SelectorKind::learned;
  if (name == "chunking") return SelectorKind::chunking;
  if (name == "sentence") return SelectorKind::sentence;
  throw ConfigError("selector", "expected one of learned, chunking, sentence; got '" + name + "'");
}

Objective objective_from_string(const std::string& name) {
  if (name == "AE" || name == "ae") return Objective::autoencode;
  if (name == "MT" || name == "mt") return Objective::translate;
  if (name == "LM" || name == "lm") return Objective::language_model;
  throw ConfigError("objective", "expected AE, MT or LM; got '" + name + "'");
}

void check_ratio(double r, const std::string& field) {
  if (!(r > 0.0 && r <= 1.0)) throw ConfigError(field, "compression ratio must lie in (0, 1], got " + std::to_string(r));
}

void ModelConfig::validate() const {
  if (vocab_size < 5) throw ConfigError("vocab_size", "must be at least 5 (4 specials + 1 word)");
  if (d_model == 0) throw ConfigError("d_model", "must be positive");
  if (heads == 0 || d_model % heads != 0) throw ConfigError("heads", "must divide d_model");
  if (encoder_layers == 0) throw ConfigError("encoder_layers", "must be positive");
  if (decoder_layers == 0) throw ConfigError("decoder_layers", "must be positive");
  if (d_ff == 0) throw ConfigError("d_ff", "must be positive");
  if (max_len == 0) throw ConfigError("max_len", "must be positive");
  if (scorer_layer > encoder_layers) throw ConfigError("scorer_layer", "must not exceed encoder_layers");
  check_ratio(ratio);
}

void TrainConfig::validate(const ModelConfig& model) const {
  if (freeze_below > model.encoder_layers + 1)
    throw ConfigError("freeze_below", "must not exceed encoder_layers + 1");
  if (!(learn_rate > 0.0) || !std::isfinite(learn_rate)) throw ConfigError("learn_rate", "must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon", "must be positive");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm", "must be non-negative (0 disables clipping)");
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw ConfigError("noise_rate", "must lie in [0, 1)");
  if (!(null_memory_rate >= 0.0 && null_memory_rate <= 1.0))
    throw ConfigError("null_memory_rate", "must lie in [0, 1]");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  for (double r : ratio_mix) check_ratio(r, "ratio_mix");
}

json to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size},
              {"d_model", c.d_model},
              {"heads", c.heads},
              {"encoder_layers", c.encoder_layers},
              {"decoder_layers", c.decoder_layers},
              {"d_ff", c.d_ff},
              {"max_len", c.max_len},
              {"scorer_layer", c.scorer_layer},
              {"ratio", c.ratio},
              {"feedback", c.feedback},
              {"bias_path", c.bias_path},
              {"use_bias_at_inference", c.use_bias_at_inference},
              {"position_embeddings", c.position_embeddings},
              {"selector", to_string(c.selector)},
              {"seed", c.seed}};
}

json to_json(const TrainConfig& c) {
  return json{{"objective", to_string(c.objective)},
              {"freeze_below", c.freeze_below},
              {"learn_rate", c.learn_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"epsilon", c.epsilon},
              {"clip_norm", c.clip_norm},
              {"noise_rate", c.noise_rate},
              {"null_memory_rate", c.null_memory_rate},
              {"batch_size", c.batch_size},
              {"max_steps", c.max_steps},
              {"ratio_mix", c.ratio_mix},
              {"seed", c.seed}};
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section, "expected a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError(section.empty() ? key : section + "." + key, "unknown field");
}

template <typename T>
void read_count(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(key, "expected a non-negative integer");
  out = v.get<T>();
}

void read_real(const json& j, const char* key, double& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(key, "expected a number");
  out = v.get<double>();
}

void read_flag(const json& j, const char* key, bool& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
  out = v.get<bool>();
}

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  reject_unknown(j,
                 {"vocab_size", "d_model", "heads", "encoder_layers", "decoder_layers", "d_ff", "max_len",
                  "scorer_layer", "ratio", "feedback", "bias_path", "use_bias_at_inference",
                  "position_embeddings", "selector", "seed"},
                 "model");
  ModelConfig c;
  read_count(j, "vocab_size", c.vocab_size);
  read_count(j, "d_model", c.d_model);
  read_count(j, "heads", c.heads);
  read_count(j, "encoder_layers", c.encoder_layers);
  read_count(j, "decoder_layers", c.decoder_layers);
  read_count(j, "d_ff", c.d_ff);
  read_count(j, "max_len", c.max_len);
  read_count(j, "scorer_layer", c.scorer_layer);
  read_real(j, "ratio", c.ratio);
  check_ratio(c.ratio);
  read_flag(j, "feedback", c.feedback);
  read_flag(j, "bias_path", c.bias_path);
  read_flag(j, "use_bias_at_inference", c.use_bias_at_inference);
  read_flag(j, "position_embeddings", c.position_embeddings);
  if (j.contains("selector")) {
    if (!j.at("selector").is_string()) throw ConfigError("selector", "expected a string");
    c.selector = selector_from_string(j.at("selector").get<std::string>());
  }
  read_count(j, "seed", c.seed);
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j,
                 {"objective", "freeze_below", "learn_rate", "beta1", "beta2", "epsilon", "clip_norm",
                  "noise_rate", "null_memory_rate", "batch_size", "max_steps", "ratio_mix", "seed"},
                 "train");
  TrainConfig c;
  if (j.contains("objective")) {
    if (!j.at("objective").is_string()) throw ConfigError("objective", "expected a string");
    c.objective = objective_from_string(j.at("objective").get<std::string>());
  }
  read_count(j, "freeze_below", c.freeze_below);
  read_real(j, "learn_rate", c.learn_rate);
  read_real(j, "beta1", c.beta1);
  read_real(j, "beta2", c.beta2);
  read_real(j, "epsilon", c.epsilon);
  read_real(j, "clip_norm", c.clip_norm);
  read_real(j, "noise_rate", c.noise_rate);
  read_real(j, "null_memory_rate", c.null_memory_rate);
  read_count(j, "batch_size", c.batch_size);
  read_count(j, "max_steps", c.max_steps);
  if (j.contains("ratio_mix")) {
    const auto& v = j.at("ratio_mix");
    if (!v.is_array()) throw ConfigError("ratio_mix", "expected an array of ratios");
    for (const auto& r : v) {
      if (!r.is_number()) throw ConfigError("ratio_mix", "expected an array of ratios");
      c.ratio_mix.push_back(r.get<double>());
      check_ratio(c.ratio_mix.back(), "ratio_mix");
    }
  }
  read_count(j, "seed", c.seed);
  return c;
}

}  // namespace nugget
