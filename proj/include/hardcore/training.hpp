// SPDX-License-Identifier: Apache-2.0
/**
 * @file   training.hpp
 * @brief  Scheduled dual-objective training with NAdam and k-fold cross-validation.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hardcore/dataset.hpp"
#include "hardcore/evaluation.hpp"
#include "hardcore/model.hpp"

namespace hardcore {

struct NadamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool nesterov = true;
};

struct TrainConfig {
  int epochs = 10000;
  double beta = 1.0;
  /// 0 selects full batch for <= 4096 training records and 1024 otherwise.
  std::size_t batch_size = 0;
  double learning_rate = 5e-3;
  /// 0 selects the factor that lowers the learning rate 100x over `epochs`.
  double lr_decay = 0.0;
  NadamParams optimizer;
  std::uint64_t seed = 0;
  int k_folds = 4;
  int eval_interval = 50;
  /// Records per autodiff graph; gradients of chunks are accumulated before a step.
  std::size_t chunk_size = 32;
  HardcoreConfig model;
  ClassifierThresholds classifier;
  /// Topologies for the Pareto sweep; empty selects default_sweep_topologies().
  std::vector<HardcoreConfig> sweep_topologies;

  void validate() const;
  std::size_t effective_batch_size(std::size_t n_train) const;
  double effective_lr_decay() const;
};

/// Reads an INI-style key = value file. Keys may be grouped in [train],
/// [model], [optimizer], [classifier] and [sweep] sections; unknown keys are errors.
TrainConfig load_train_config(const std::filesystem::path& path);
/// Applies one `key=value` override, e.g. "train.epochs=200".
void apply_config_override(TrainConfig& config, const std::string& assignment);

/// Mean squared error over all N x M elements.
tensor::Tensor loss_h(const tensor::Tensor& h_hat_n, std::span<const double> h_n);
/// Mean squared log error with p_hat clamped below at 1e-9.
tensor::Tensor loss_p(const tensor::Tensor& p_hat, std::span<const double> p);

inline constexpr double kLossFloor = 1e-9;

/// alpha = beta * epoch / epochs.
double alpha_schedule(int epoch, int epochs, double beta);
/// alpha * loss_p + (1 - alpha) * loss_h.
tensor::Tensor total_loss(const tensor::Tensor& lh, const tensor::Tensor& lp, double alpha);

/// Adam with Nesterov momentum (Dozat's NAdam without the momentum-decay
/// schedule). With g the gradient at step t (1-based):
///
///   m  = beta1 m + (1 - beta1) g
///   v  = beta2 v + (1 - beta2) g^2
///   m' = beta1 m / (1 - beta1^(t+1)) + (1 - beta1) g / (1 - beta1^t)
///   v' = v / (1 - beta2^t)
///   x -= lr m' / (sqrt(v') + eps)
///
/// With `nesterov` off, m' = m / (1 - beta1^t) (plain Adam).
class Nadam {
 public:
  Nadam(std::vector<tensor::Tensor> parameters, NadamParams params);
  void step(double learning_rate);
  void zero_grad();
  long steps() const { return t_; }

 private:
  std::vector<tensor::Tensor> params_;
  NadamParams hp_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

struct TrainRun {
  TrainConfig config;
  int fold = -1;  // -1 trains on every trainable record
  std::string material_id;
  std::vector<EpochLog> log;
  std::optional<HardcoreModel> model;
  std::vector<std::size_t> validation_indices;
  std::vector<double> validation_p_hat;
  std::optional<MetricsReport> validation;
  std::vector<double> training_p_hat;  // final-epoch model, training records in order
  std::vector<std::size_t> training_indices;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains one model. `fold` selects the held-out fold of `split`; pass
/// std::nullopt (or a null split) to train on all trainable records. Throws
/// NumericError naming the epoch when the loss becomes non-finite.
TrainRun train(const MaterialDataset& dataset, const FoldSplit* split, std::optional<int> fold,
               const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Default strata: waveform class x quartile of ln f.
std::vector<int> default_strata(const MaterialDataset& dataset, const ClassifierThresholds& thresholds = {});

struct CrossValidation {
  std::vector<TrainRun> runs;  // ordered by seed, then fold
  std::vector<std::uint64_t> seeds;
  std::uint64_t best_seed = 0;
  /// Mean of fold-wise average relative errors, per seed.
  std::vector<double> seed_mean_avg_rel_err;
  /// Validation errors of the best seed pooled across folds.
  std::optional<MetricsReport> best_pooled;
};

/// Trains k_folds x |seeds| runs. The fold split is drawn with `split_seed`
/// and shared by all seeds. Runs execute on up to `workers` threads (0 = hardware).
CrossValidation cross_validate(const MaterialDataset& dataset, const TrainConfig& config,
                               std::span<const std::uint64_t> seeds, std::uint64_t split_seed = 0,
                               unsigned workers = 0);

/// Writes one JSON object per epoch: {epoch, loss_h, loss_p, alpha, lr,
/// val_avg_rel_err, val_p95_rel_err}; unevaluated validation fields are null.
void write_epoch_log(std::span<const EpochLog> log, const std::filesystem::path& path);

}  // namespace hardcore
