#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "deca/data.hpp"
#include "deca/losses.hpp"
#include "deca/metrics.hpp"
#include "deca/model.hpp"

namespace deca {

struct TrainConfig {
  double learning_rate = 1e-5;
  double weight_decay = 0.0;
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  /// Stops after this many optimizer steps in total when nonzero.
  std::size_t max_steps = 0;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm clip; 0 disables it.
  double clip_norm = 0.0;
  /// Relief values above this (metres) count as foreground in the DM loss.
  double depth_threshold = 0.1;
  InverseGraphicsMode inverse_graphics = InverseGraphicsMode::Eq5Consistent;

  void validate() const;
};

template <typename T>
struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<T>> m, v;
};

/// One bias-corrected Adam update of every parameter, then zeroes the grads.
template <typename T>
void adam_step(const ParameterList<T>& params, AdamState<T>& state, const TrainConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double loss_total = 0;
  std::map<std::string, double> loss_per_task;
  std::map<std::string, double> s_per_task;
  double wall_ms = 0;

  nlohmann::json to_json() const;
};

struct StepResult {
  double loss_total = 0;
  std::map<Task, double> losses;
};

/// Owns the model, the per-task loss weights and the optimizer state. The
/// batch schedule is a pure function of (seed, global step), so a trainer
/// restored at step k continues exactly as an uninterrupted run would.
template <typename T>
class Trainer {
 public:
  Trainer(const ModelConfig& model_config, const TrainConfig& train_config);

  const DecaModel<T>& model() const noexcept { return model_; }
  const LossWeights<T>& loss_weights() const noexcept { return weights_; }
  const AdamState<T>& adam() const noexcept { return adam_; }
  AdamState<T>& adam() noexcept { return adam_; }
  const TrainConfig& config() const noexcept { return config_; }
  const ModelConfig& model_config() const noexcept { return model_config_; }
  std::size_t step() const noexcept { return adam_.step; }
  /// Extends (or shortens) the step budget, e.g. when resuming a checkpoint.
  void set_max_steps(std::size_t max_steps) noexcept { config_.max_steps = max_steps; }

  /// Model parameters followed by the loss weights s; the optimizer order.
  ParameterList<T> parameters() const;

  /// Task losses for a batch (no backward).
  std::map<Task, Tensor<T>> losses(const Batch<T>& batch, Mode mode, Rng* rng) const;

  /// Forward, total loss, backward and one Adam update.
  StepResult train_step(const Batch<T>& batch);

  /// Sample order of an epoch: a seeded Fisher-Yates shuffle of `indices`.
  std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& indices, std::size_t epoch) const;

  /// Runs from the current step to epochs * steps_per_epoch (or max_steps).
  std::vector<EpochLog> fit(const Dataset& data, const std::vector<std::size_t>& indices,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

 private:
  ModelConfig model_config_;
  TrainConfig config_;
  DecaModel<T> model_;
  LossWeights<T> weights_;
  AdamState<T> adam_;
};

struct Evaluation {
  std::vector<std::size_t> indices;
  PointSet pred, gt;             // N*J x 3, camera frame
  std::vector<double> entities;  // N * J * 16
  MetricsReport report;
};

/// Eval-mode forward over the given samples.
template <typename T>
Evaluation evaluate(const DecaModel<T>& model, const Dataset& data, const std::vector<std::size_t>& indices,
                    std::size_t batch_size = 32);

/// The mean world-frame pose of the reference samples, mapped into the
/// camera of every target sample.
PointSet mean_pose_baseline(const Dataset& data, const std::vector<std::size_t>& reference,
                            const std::vector<std::size_t>& targets);

/// Ground-truth joints of the given samples, N*J x 3.
PointSet ground_truth(const Dataset& data, const std::vector<std::size_t>& indices);

}  // namespace deca
