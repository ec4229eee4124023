#pragma once

// Offline double-DQN training from a fixed set of logged transitions.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "morphdose/checkpoint.hpp"
#include "morphdose/error.hpp"
#include "morphdose/qnet.hpp"
#include "morphdose/replay.hpp"

namespace morphdose {

struct TrainConfig {
  double gamma = 0.99;
  std::size_t batch_size = 32;
  std::size_t target_sync_interval = 1000;
  std::size_t total_steps = 100000;
  std::size_t eval_interval = 5000;
  std::size_t log_interval = 100;
  AdamConfig adam;
  PerConfig per;
  LossKind loss = LossKind::Huber;
  QNetShape shape;
  std::uint64_t seed = 0;

  /// Throws Configuration on invalid values.
  void validate() const;
  /// Flat key/value view, stored in checkpoints.
  std::map<std::string, std::string> to_metadata() const;
};

/// Double-DQN targets: y = r + gamma * Q_target(s', argmax_a Q_online(s', a)), or y = r for
/// terminal transitions. States in the batch must already be normalized.
Eigen::VectorXd compute_target(const QParams& online, const QParams& target, const SampleBatch& batch, double gamma);

/// Scores a candidate model by simulator rollouts; higher is better.
using PolicyScorer = std::function<double(const QModel&)>;

struct ValidationMetrics {
  bool ok = false;
  std::string error;
  std::size_t transitions = 0;
  double mean_abs_td = 0.0;
  std::optional<double> simulated_mean_reward;
};

/// Mean |TD error| of `params` on raw (unnormalized) validation transitions, using the model
/// itself for both action selection and evaluation; plus the scorer's value when given.
/// An empty validation set yields ok == false with an error message.
ValidationMetrics validate(const QModel& model, std::span<const Transition> validation, double gamma,
                           const PolicyScorer* scorer = nullptr);

struct TrainLogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double mean_q = 0.0;
  double beta = 0.0;
  double lr = 0.0;
  std::optional<double> val_metric;
};

struct TrainResult {
  QModel best;
  QModel final_model;
  std::size_t best_step = 0;
  ValidationMetrics best_metrics;
  std::vector<TrainLogRow> log;
};

/// Called after every optimizer step with (step, online, target); used to inspect training.
using TrainObserver = std::function<void(std::size_t, const QParams&, const QParams&)>;

/// Thrown when the loss or parameters become non-finite. Holds the best model so far.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t step, QModel last_good)
      : Error(ErrorKind::Numeric, "training diverged at step " + std::to_string(step)),
        step_(step),
        last_good_(std::move(last_good)) {}

  std::size_t step() const { return step_; }
  const QModel& last_good() const { return last_good_; }

 private:
  std::size_t step_;
  QModel last_good_;
};

/// Fills a prioritized buffer with `train_set` once, then runs total_steps minibatch updates.
/// Normalization is fitted on `train_set`. The best model is chosen by the scorer when one is
/// given, otherwise by validation TD error, otherwise the final model is returned as best.
/// Deterministic for a given config.seed.
TrainResult train(std::span<const Transition> train_set, std::span<const Transition> validation,
                  const TrainConfig& config, const PolicyScorer* scorer = nullptr,
                  const TrainObserver* observer = nullptr);

/// CSV with columns step,loss,mean_q,beta,lr,val_metric (val_metric empty when not evaluated).
std::string format_train_log(std::span<const TrainLogRow> rows);

}  // namespace morphdose
