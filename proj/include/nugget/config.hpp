#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace nugget {

// Invalid configuration value; `field` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class SelectorKind { learned, chunking, sentence };
enum class Objective { autoencode, translate, language_model };

std::string to_string(SelectorKind kind);
std::string to_string(Objective objective);
SelectorKind selector_from_string(const std::string& name);
Objective objective_from_string(const std::string& name);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 4;
  std::size_t decoder_layers = 4;
  std::size_t d_ff = 256;
  std::size_t max_len = 256;
  // Encoder layer whose states feed the scorer (l); feedback is injected there.
  std::size_t scorer_layer = 3;
  double ratio = 0.1;
  bool feedback = true;
  // Residual logit injection of the scores into decoder cross-attention.
  bool bias_path = true;
  bool use_bias_at_inference = true;
  bool position_embeddings = true;
  SelectorKind selector = SelectorKind::learned;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainConfig {
  Objective objective = Objective::autoencode;
  // Encoder blocks [0, freeze_below) and the encoder embedding tables stay
  // fixed. encoder_layers + 1 additionally freezes the final encoder norm.
  std::size_t freeze_below = 3;
  double learn_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;
  double noise_rate = 0.0;
  // Fraction of examples decoded against the null memory slot only.
  double null_memory_rate = 0.1;
  std::size_t batch_size = 8;
  std::size_t max_steps = 1000;
  // When non-empty, every example draws its compression ratio from this list.
  std::vector<double> ratio_mix;
  std::uint64_t seed = 0;

  void validate(const ModelConfig& model) const;
};

// Compression ratio domain check shared by every entry point.
void check_ratio(double r, const std::string& field = "ratio");

nlohmann::json to_json(const ModelConfig& config);
nlohmann::json to_json(const TrainConfig& config);
// Missing keys keep their defaults; unknown keys and wrong types are errors.
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace nugget
