#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nugget/config.hpp"
#include "nugget/data.hpp"
#include "nugget/nugget.hpp"

namespace nugget {

// Mean token-level negative log-likelihood of `targets` under row-wise
// softmax(logits).
Tensor nll_loss(const Tensor& logits, std::span<const TokenId> targets);

struct TrainingExample {
  Document source;  // what the encoder sees (after noise)
  std::vector<TokenId> target;
  std::optional<double> ratio;  // overrides the model ratio
};

// Target is the document; the source drops every token independently with
// probability noise_rate, keeping at least one.
TrainingExample make_ae_example(const Document& doc, double noise_rate, Rng& rng);
TrainingExample make_mt_example(const Document& source, const Document& target);

// Teacher-forced loss of one example. With `null_memory` the decoder attends
// only to the learned null slot.
Tensor example_loss(const NuggetModel& model, const TrainingExample& example, bool null_memory = false);

// Fraction of target tokens (EOS included) that are the argmax of the
// teacher-forced reconstruction logits.
double teacher_forced_accuracy(const NuggetModel& model, std::span<const Document> docs);

class Adam {
 public:
  Adam(ParamList params, double learn_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  // Applies one update to every parameter that requires gradients.
  void step();
  void zero_grad();
  std::size_t steps() const { return steps_; }
  double learn_rate() const { return learn_rate_; }
  void set_learn_rate(double lr) { learn_rate_ = lr; }

 private:
  ParamList params_;
  std::vector<std::vector<double>> first_, second_;
  double learn_rate_, beta1_, beta2_, epsilon_;
  std::size_t steps_ = 0;
};

// Rescales gradients so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

struct TrainMetrics {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t tokens = 0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(NuggetModel& model, const TrainConfig& config);

  // One update on a batch; the loss is token-weighted over the batch.
  TrainMetrics step(std::span<const TrainingExample> batch);
  // One update from `count` losses, each produced on demand together with its
  // token count.
  TrainMetrics step_with(std::size_t count, const std::function<std::pair<Tensor, std::size_t>(std::size_t)>& loss_of);

  const std::vector<std::string>& frozen() const { return frozen_; }
  const TrainConfig& config() const { return config_; }
  std::size_t steps() const { return optimizer_.steps(); }
  void set_learn_rate(double lr) { optimizer_.set_learn_rate(lr); }
  Rng& rng() { return rng_; }
  const NuggetModel& model() const { return model_; }

 private:
  NuggetModel& model_;
  TrainConfig config_;
  std::vector<std::string> frozen_;
  ParamList params_;
  Adam optimizer_;
  Rng rng_;
};

// Deterministic epoch order: a fresh shuffle of [0, n) per epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t n_, batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Trains on documents for config.max_steps, drawing fresh noise per step.
// `log` is called after every step.
std::vector<TrainMetrics> train_documents(Trainer& trainer, std::span<const Document> sources,
                                          std::span<const Document> targets,
                                          const std::function<void(const TrainMetrics&)>& log = {});

struct Checkpoint {
  ModelConfig model;
  Vocabulary vocab;
  std::size_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const NuggetModel& model, const Vocabulary& vocab, std::size_t step);
std::string serialize_checkpoint(const NuggetModel& model, const Vocabulary& vocab, std::size_t step);
Checkpoint read_checkpoint(const std::string& path);
Checkpoint parse_checkpoint(const std::string& bytes);
// Model rebuilt from the checkpoint config with every parameter restored.
NuggetModel model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace nugget
