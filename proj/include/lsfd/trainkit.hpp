#pragma once

#include "lsfd/objective.hpp"
#include "lsfd/synthvid.hpp"
#include "lsfd/viewkit.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <span>

namespace lsfd {

struct TrainConfig {
  int n = 2;
  int l = 8;
  int stride = 3;
  int batch_size = 16;
  int epochs = 40;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  double momentum = 0.99;
  double tau = 0.1;
  int bank_capacity = 256;
  AggregatorKind aggregator = AggregatorKind::Sum;
  LossFlags loss_flags;
  std::uint64_t seed = 1;
  int plateau_patience = 3;
  double plateau_factor = 10.0;
  double plateau_rel_tol = 1e-3;
  int val_videos = 64;  // test videos used for the validation loss, 0 = all
  StartPolicy start_policy = StartPolicy::Uniform;
  EncoderConfig encoder;
  AugConfig aug;

  void validate() const;
  ModelConfig model_config() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Adam with the L2 term folded into the gradient (g + wd * θ).
struct OptimState {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::map<std::string, Vector> m, v;  // keyed by parameter name
};

/// One Adam update of every listed parameter; throws if one lacks a gradient.
void adam_step(const NamedTensors& params, OptimState& opt);
void zero_grad(const NamedTensors& params);

/// Replays `history` with a patience counter: an entry improves when it is
/// below best * (1 - rel_tol); `patience` consecutive non-improvements trigger
/// a reduction and reset the counter. Returns lr / factor when a reduction
/// fires on the last entry, else lr.
double plateau_schedule(std::span<const double> history, double lr, int patience, double factor,
                        double rel_tol = 1e-3);

struct EpochStats {
  int epoch = 0;
  double train_total = 0, train_stationary = 0, train_non_stationary = 0, train_instance = 0;
  double val_total = 0, val_stationary = 0, val_non_stationary = 0, val_instance = 0;
  double lr = 0;
  int bank_size = 0;
  int steps = 0;
  bool operator==(const EpochStats&) const = default;
};

nlohmann::json to_json(const EpochStats& stats);
EpochStats epoch_stats_from_json(const nlohmann::json& j);

struct TrainState {
  TrainConfig config;
  MomentumPair model;
  MemoryBank bank{1, 1};
  OptimState opt;
  int epoch = 0;  // completed epochs
  std::vector<EpochStats> history;
};

TrainState make_train_state(const TrainConfig& config);

/// Parameters that receive gradients under the enabled loss terms.
NamedTensors active_parameters(const TrainState& state);

/// One pass over the train split followed by the validation loss.
EpochStats train_epoch(const Corpus& corpus, TrainState& state);

/// Validation loss on the test split: fixed views per video, key positives,
/// frozen bank snapshot, no parameter or bank updates.
EpochStats validation_loss(const Corpus& corpus, const TrainState& state);

/// Runs until state.epoch == config.epochs, calling `on_epoch` after each.
void train(const Corpus& corpus, TrainState& state, const std::function<void(const TrainState&)>& on_epoch = {});

struct Checkpoint {
  std::uint32_t version = 0;
  TrainConfig config;
  int epoch = 0;
  std::vector<EpochStats> history;
  OptimState opt;  // moments populated
  std::vector<std::pair<std::string, Tensor>> tensors;  // manifest order
  const Tensor* find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Rebuilds the full training state; shapes must match the stored config.
TrainState restore_train_state(const Checkpoint& checkpoint);

/// Copies every tensor of `from` into the same-named tensor of `into`,
/// failing with both shapes on mismatch.
void load_parameters(const NamedTensors& into, const Checkpoint& from);

/// Initializes an N-sub-sequence run from an (N-1) checkpoint: encoder and
/// heads carried over, aggregator carried when shapes allow, lr 1e-4 and
/// weight decay 1e-6, fresh optimizer and bank.
TrainState curriculum_init(const TrainConfig& config, const Checkpoint& previous);

}  // namespace lsfd
