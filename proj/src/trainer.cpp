#include "vnn/trainer.hpp"

#include <cmath>
#include <numeric>

#include "vnn/errors.hpp"

namespace vnn {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be non-negative");
  if (!(clip_bound > 0)) throw ConfigError("clip bound must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
}

double train_step(std::span<const Sample* const> batch, Model& model, OptimizerState& optimizer,
                  const TapeOptions& tape_options) {
  if (batch.empty()) throw DomainError("train_step needs a non-empty batch");
  model.params.tensors.zero_grad();
  Tape tape(tape_options);
  const BoundParameters bound = bind_trainable(tape, model.params);
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (const Sample* s : batch) {
    Var views = tape.constant_view(s->views.tensor());
    Var logits = multi_scale_forward(views, model.config, bound).logits;
    Var loss = cross_entropy(logits, s->label);
    if (!std::isfinite(loss.item())) throw NumericError("non-finite loss for sample '" + s->id + "'");
    losses.push_back(loss);
  }
  Var total = mean(losses);
  const double value = total.item();
  tape.backward(total);
  clip_gradients(model.params.tensors, optimizer.clip_bound);
  sgd_step(model.params.tensors, optimizer);
  return value;
}

Trainer::Trainer(ModelConfig model_config, TrainConfig train_config)
    : config_(train_config), rng_(derive_seed(train_config.seed, 1)) {
  config_.validate();
  model_config.validate();
  model_.params = init_parameters(model_config, config_.seed);
  model_.config = std::move(model_config);
  optimizer_ = make_optimizer(model_.params.tensors, static_cast<Real>(config_.learning_rate),
                              static_cast<Real>(config_.momentum), static_cast<Real>(config_.weight_decay),
                              static_cast<Real>(config_.clip_bound));
}

Trainer::Trainer(Checkpoint checkpoint)
    : config_(checkpoint.train_config),
      optimizer_(std::move(checkpoint.optimizer)),
      rng_(Rng::from_state(checkpoint.rng_state)),
      epoch_(checkpoint.epoch),
      loss_history_(std::move(checkpoint.loss_history)) {
  config_.validate();
  model_.config = std::move(checkpoint.model_config);
  model_.params = std::move(checkpoint.params);
}

void Trainer::check_dataset(std::span<const Sample> dataset) const {
  if (dataset.empty()) throw DataError("training dataset is empty");
  for (const auto& s : dataset) {
    if (s.views.dim() != model_.config.input_dim) {
      throw DataError("sample '" + s.id + "' has D=" + std::to_string(s.views.dim()) + ", model expects D=" +
                      std::to_string(model_.config.input_dim));
    }
    if (s.label >= model_.config.num_classes) {
      throw DataError("sample '" + s.id + "' has label " + std::to_string(s.label) + " outside [0, " +
                      std::to_string(model_.config.num_classes) + ")");
    }
  }
}

double Trainer::run_epoch(std::span<const Sample> dataset) {
  check_dataset(dataset);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_.uniform_index(i)]);

  double weighted = 0;
  std::vector<const Sample*> batch;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    const std::size_t stop = std::min(order.size(), start + config_.batch_size);
    batch.clear();
    for (std::size_t i = start; i < stop; ++i) batch.push_back(&dataset[order[i]]);
    weighted += train_step(batch, model_, optimizer_, tape_options_) * static_cast<double>(batch.size());
  }
  const double epoch_loss = weighted / static_cast<double>(dataset.size());
  ++epoch_;
  loss_history_.push_back(epoch_loss);
  return epoch_loss;
}

void Trainer::run(std::span<const Sample> dataset, const std::function<void(std::size_t, double)>& on_epoch) {
  check_dataset(dataset);
  while (epoch_ < config_.epochs) {
    const double loss = run_epoch(dataset);
    if (on_epoch) on_epoch(epoch_, loss);
  }
}

Checkpoint Trainer::checkpoint() const {
  return {model_.config, config_, model_.params, optimizer_, epoch_, rng_.state(), loss_history_};
}

TrainResult train(std::span<const Sample> dataset, const ModelConfig& model_config, const TrainConfig& config) {
  Trainer trainer(model_config, config);
  trainer.run(dataset);
  return {trainer.model(), trainer.loss_history()};
}

}  // namespace vnn
