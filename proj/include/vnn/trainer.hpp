#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "vnn/data.hpp"
#include "vnn/model.hpp"
#include "vnn/optim.hpp"
#include "vnn/rng.hpp"
#include "vnn/tape.hpp"

namespace vnn {

/// Branch sizes of the default three-branch model.
inline const std::vector<std::size_t> kDefaultNgramSizes = {3, 5, 7};

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  double clip_bound = 0.01;
  std::size_t epochs = 150;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Mean cross-entropy over batch, one backward pass, elementwise clip, one
/// SGD step. Returns the batch loss.
double train_step(std::span<const Sample* const> batch, Model& model, OptimizerState& optimizer,
                  const TapeOptions& tape_options = {});

struct Checkpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  ModelParameters params;
  OptimizerState optimizer;
  std::size_t epoch = 0;
  Rng::State rng_state{};
  std::vector<double> loss_history;
};

/// Epoch-level training driver. Each epoch shuffles the dataset with the
/// trainer's generator and walks it in batches of batch_size; the last batch
/// may be smaller.
class Trainer {
 public:
  Trainer(ModelConfig model_config, TrainConfig train_config);
  explicit Trainer(Checkpoint checkpoint);

  /// Runs one epoch and returns its sample-weighted mean loss.
  double run_epoch(std::span<const Sample> dataset);
  /// Runs epochs until config().epochs have completed. on_epoch, if set, is
  /// called after each epoch with the epoch index (1-based) and its loss.
  void run(std::span<const Sample> dataset,
           const std::function<void(std::size_t, double)>& on_epoch = nullptr);

  Checkpoint checkpoint() const;

  const Model& model() const { return model_; }
  const TrainConfig& config() const { return config_; }
  std::size_t epoch() const { return epoch_; }
  const std::vector<double>& loss_history() const { return loss_history_; }
  void set_tape_options(TapeOptions options) { tape_options_ = std::move(options); }

 private:
  void check_dataset(std::span<const Sample> dataset) const;

  Model model_;
  TrainConfig config_;
  OptimizerState optimizer_;
  Rng rng_;
  std::size_t epoch_ = 0;
  std::vector<double> loss_history_;
  TapeOptions tape_options_;
};

struct TrainResult {
  Model model;
  std::vector<double> loss_history;
};

TrainResult train(std::span<const Sample> dataset, const ModelConfig& model_config, const TrainConfig& config);

// Checkpoint files: "VNC1", u32 version, u32-length-prefixed JSON config,
// u32 tensor count, then per tensor: u32 name length, name, u32 rank, rank
// u32 extents, float64 payload. Little-endian throughout.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vnn
