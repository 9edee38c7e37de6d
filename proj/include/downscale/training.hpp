#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "downscale/model.hpp"
#include "downscale/tensor.hpp"

namespace downscale::train {

struct TrainConfig {
  int epochs_max = 1000;
  int batch_size = 64;
  int patience = 60;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

struct TrainState {
  int epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int since_improvement = 0;
  AdamState adam;
};

/// Mean over batch and pixels of (pred - truth)^2, as a scalar tensor.
Tensor mse_loss(const Tensor& pred, const Tensor& truth);

/// One bias-corrected Adam update from the gradients held by `params`.
/// Throws std::invalid_argument if a parameter has no gradient.
void adam_step(std::span<model::NamedParameter> params, AdamState& state, const TrainConfig& config);

/// Stacked training pairs in model space (log1p): x [N, h, w, 1], y [N, H, W, 1].
struct TensorPairs {
  Tensor x;
  Tensor y;

  std::int64_t size() const { return x.defined() ? x.dim(0) : 0; }
};

/// Rows `index` of a stacked tensor.
Tensor gather(const Tensor& stacked, std::span<const std::size_t> index);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct History {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  bool early_stopped = false;

  /// "epoch,train_loss,val_loss" rows.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Validation MSE of the model over `pairs`, evaluated in batches.
double evaluate_mse(const model::AttentionSRModel& model, const TensorPairs& pairs, const Tensor& elevation,
                    int batch_size);

struct TrainHooks {
  /// Replaces the validation loss computation when set.
  std::function<double(const model::AttentionSRModel&, int epoch)> validation;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Shuffled mini-batch Adam with early stopping on validation MSE. The last
/// partial batch is kept. On return the model holds the best-validation
/// parameters.
History train(model::AttentionSRModel& model, const TensorPairs& train_set, const TensorPairs& val_set,
              const Tensor& elevation, const TrainConfig& config, const TrainHooks& hooks = {});

}  // namespace downscale::train
