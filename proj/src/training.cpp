#include "nugget/training.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace nugget {

Tensor nll_loss(const Tensor& logits, std::span<const TokenId> targets) {
  if (targets.empty()) throw std::invalid_argument("nll_loss: no targets");
  return cross_entropy_nll(logits, targets);
}

TrainingExample make_ae_example(const Document& doc, double noise_rate, Rng& rng) {
  if (doc.tokens.empty()) throw std::invalid_argument("make_ae_example: empty document '" + doc.doc_id + "'");
  if (!(noise_rate >= 0.0 && noise_rate < 1.0))
    throw ConfigError("noise_rate", "must lie in [0, 1)");
  TrainingExample ex;
  ex.target = doc.tokens;
  if (noise_rate == 0.0) {
    ex.source = doc;
    return ex;
  }
  const std::size_t n = doc.tokens.size();
  std::vector<bool> keep(n);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    keep[i] = !rng.bernoulli(noise_rate);
    kept += keep[i];
  }
  if (kept == 0) keep[rng.below(n)] = true;

  ex.source.doc_id = doc.doc_id;
  std::size_t sentence = 0;
  bool sentence_has_tokens = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (keep[i]) {
      ex.source.tokens.push_back(doc.tokens[i]);
      sentence_has_tokens = true;
    }
    if (sentence < doc.sentence_ends.size() && doc.sentence_ends[sentence] == i) {
      if (sentence_has_tokens) ex.source.sentence_ends.push_back(ex.source.tokens.size() - 1);
      sentence_has_tokens = false;
      ++sentence;
    }
  }
  return ex;
}

TrainingExample make_mt_example(const Document& source, const Document& target) {
  if (source.tokens.empty() || target.tokens.empty())
    throw std::invalid_argument("make_mt_example: empty side in pair '" + source.doc_id + "'");
  return TrainingExample{source, target.tokens, std::nullopt};
}

Tensor example_loss(const NuggetModel& model, const TrainingExample& example, bool null_memory) {
  const auto inputs = decoder_inputs_for(example.target);
  const auto outputs = decoder_outputs_for(example.target);
  if (null_memory) return nll_loss(model.decode_unconditional(inputs), outputs);
  const NuggetSet nuggets = model.generate(example.source.tokens, &example.source, example.ratio);
  return nll_loss(model.decode(nuggets, inputs, true), outputs);
}

double teacher_forced_accuracy(const NuggetModel& model, std::span<const Document> docs) {
  NoGradGuard no_grad;
  std::size_t hits = 0, total = 0;
  for (const auto& doc : docs) {
    const NuggetSet set = model.generate(doc.tokens, &doc);
    const Tensor logits = model.decode(set, decoder_inputs_for(doc.tokens), false);
    const auto outputs = decoder_outputs_for(doc.tokens);
    const std::size_t v = logits.cols();
    for (std::size_t r = 0; r < outputs.size(); ++r) {
      const auto row = logits.data().subspan(r * v, v);
      hits += static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin()) == outputs[r];
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

Adam::Adam(ParamList params, double learn_rate, double beta1, double beta2, double epsilon)
    : params_(std::move(params)), learn_rate_(learn_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  for (const auto& p : params_) {
    first_.emplace_back(p.tensor.numel(), 0.0);
    second_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto value = p.mutable_data();
    auto grad = p.grad();
    auto& m = first_[i];
    auto& v = second_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * grad[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * grad[j] * grad[j];
      value[j] -= learn_rate_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + epsilon_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.tensor.has_grad())
      for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto p : params)
      if (p.tensor.has_grad())
        for (double& g : p.tensor.mutable_grad()) g *= factor;
  }
  return norm;
}

Trainer::Trainer(NuggetModel& model, const TrainConfig& config)
    : model_(model),
      config_(config),
      frozen_((config.validate(model.config()), model.freeze_encoder_below(config.freeze_below))),
      params_(model.parameters()),
      optimizer_(params_, config.learn_rate, config.beta1, config.beta2, config.epsilon),
      rng_(config.seed) {}

TrainMetrics Trainer::step(std::span<const TrainingExample> batch) {
  std::vector<bool> null_memory(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    null_memory[i] = config_.null_memory_rate > 0.0 && rng_.bernoulli(config_.null_memory_rate);
  return step_with(batch.size(), [&](std::size_t i) {
    return std::make_pair(example_loss(model_, batch[i], null_memory[i]), batch[i].target.size() + 1);
  });
}

TrainMetrics Trainer::step_with(std::size_t count,
                                const std::function<std::pair<Tensor, std::size_t>(std::size_t)>& loss_of) {
  if (count == 0) throw std::invalid_argument("train_step: empty batch");
  optimizer_.zero_grad();
  // Each example is built and released on its own; the first pass only
  // fixes the token total so every loss can be weighted before backward.
  std::vector<std::pair<Tensor, std::size_t>> losses;
  losses.reserve(count);
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < count; ++i) {
    losses.push_back(loss_of(i));
    tokens += losses.back().second;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    auto& [loss, n] = losses[i];
    const double value = loss.item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite loss " << value << " at step " << optimizer_.steps() + 1 << ", example " << i
          << " of " << count << " (" << n << " tokens, lr " << config_.learn_rate << ")";
      throw NonFiniteLoss(msg.str());
    }
    const double weight = static_cast<double>(n) / static_cast<double>(tokens);
    total += weight * value;
    backward(scale(loss, weight));
    loss = Tensor();
  }
  TrainMetrics metrics;
  metrics.grad_norm = clip_grad_norm(params_, config_.clip_norm);
  optimizer_.step();
  metrics.step = optimizer_.steps();
  metrics.loss = total;
  metrics.tokens = tokens;
  return metrics;
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_size_(batch_size), rng_(seed) {
  if (n == 0 || batch_size == 0) throw std::invalid_argument("BatchSampler: need documents and a batch size");
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> batch;
  while (batch.size() < std::min(batch_size_, n_)) {
    if (cursor_ == order_.size()) {
      order_.resize(n_);
      std::iota(order_.begin(), order_.end(), 0);
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

std::vector<TrainMetrics> train_documents(Trainer& trainer, std::span<const Document> sources,
                                          std::span<const Document> targets,
                                          const std::function<void(const TrainMetrics&)>& log) {
  const TrainConfig& cfg = trainer.config();
  if (cfg.objective == Objective::language_model)
    throw std::invalid_argument("train_documents: language modelling trains on a token stream");
  const bool translate = cfg.objective == Objective::translate;
  if (translate && targets.size() != sources.size())
    throw std::invalid_argument("train_documents: translation needs one target per source");
  BatchSampler sampler(sources.size(), cfg.batch_size, cfg.seed ^ 0x5eedULL);
  std::vector<TrainMetrics> history;
  for (std::size_t s = 0; s < cfg.max_steps; ++s) {
    std::vector<TrainingExample> batch;
    for (std::size_t i : sampler.next()) {
      batch.push_back(translate ? make_mt_example(sources[i], targets[i])
                                : make_ae_example(sources[i], cfg.noise_rate, trainer.rng()));
      if (!cfg.ratio_mix.empty()) batch.back().ratio = cfg.ratio_mix[trainer.rng().below(cfg.ratio_mix.size())];
    }
    history.push_back(trainer.step(batch));
    if (log) log(history.back());
  }
  return history;
}

namespace {

constexpr char kMagic[8] = {'N', 'U', 'G', 'G', 'E', 'T', 'C', 'K'};

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return value;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated file");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const NuggetModel& model, const Vocabulary& vocab, std::size_t step) {
  nlohmann::json header{{"config", to_json(model.config())}, {"vocab", vocab.words()}, {"step", step}};
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  const ParamList params = model.parameters();
  put_le<std::uint64_t>(out, params.size());
  for (const auto& p : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) put_le<std::uint64_t>(out, d);
    for (double v : p.tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

void save_checkpoint(const std::string& path, const NuggetModel& model, const Vocabulary& vocab, std::size_t step) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(model, vocab, step);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw std::runtime_error("checkpoint: bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  const auto header = nlohmann::json::parse(in.take(in.get<std::uint64_t>()));
  Checkpoint ck;
  ck.model = model_config_from_json(header.at("config"));
  ck.vocab = Vocabulary::from_words(header.at("vocab").get<std::vector<std::string>>());
  ck.step = header.at("step").get<std::size_t>();
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string name = in.take(in.get<std::uint32_t>());
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint64_t>();
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(in.get<std::uint64_t>());
    ck.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ck;
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

NuggetModel model_from_checkpoint(const Checkpoint& checkpoint) {
  NuggetModel model(checkpoint.model);
  model.set_punctuation(checkpoint.vocab.punctuation_ids());
  auto params = model.parameters();
  if (params.size() != checkpoint.tensors.size())
    throw std::runtime_error("checkpoint: expected " + std::to_string(params.size()) + " tensors, found " +
                             std::to_string(checkpoint.tensors.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, tensor] = checkpoint.tensors[i];
    if (name != params[i].name) throw std::runtime_error("checkpoint: expected tensor " + params[i].name + ", found " + name);
    if (tensor.shape() != params[i].tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": " + shape_string(tensor.shape()) +
                               " vs " + shape_string(params[i].tensor.shape()));
    std::copy(tensor.data().begin(), tensor.data().end(), params[i].tensor.mutable_data().begin());
  }
  return model;
}

}  // namespace nugget
