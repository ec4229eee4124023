#include "morphdose/trainer.hpp"

#include <cmath>

#include "morphdose/text_io.hpp"

namespace morphdose {

void TrainConfig::validate() const {
  require(gamma >= 0.0 && gamma < 1.0, ErrorKind::Configuration, "gamma must lie in [0,1)");
  require(batch_size >= 1, ErrorKind::Configuration, "batch_size must be >= 1");
  require(target_sync_interval >= 1, ErrorKind::Configuration, "target_sync_interval must be >= 1");
  require(eval_interval >= 1 && log_interval >= 1, ErrorKind::Configuration, "intervals must be >= 1");
  require(adam.lr > 0.0 && adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 &&
              adam.epsilon > 0.0,
          ErrorKind::Configuration, "invalid Adam hyperparameters");
  require(per.alpha >= 0.0 && per.priority_epsilon > 0.0 && per.beta_start >= 0.0 && per.beta_end >= 0.0,
          ErrorKind::Configuration, "invalid replay hyperparameters");
}

std::map<std::string, std::string> TrainConfig::to_metadata() const {
  return {
      {"gamma", format_real(gamma)},
      {"batch_size", std::to_string(batch_size)},
      {"target_sync_interval", std::to_string(target_sync_interval)},
      {"total_steps", std::to_string(total_steps)},
      {"eval_interval", std::to_string(eval_interval)},
      {"lr", format_real(adam.lr)},
      {"adam_beta1", format_real(adam.beta1)},
      {"adam_beta2", format_real(adam.beta2)},
      {"adam_epsilon", format_real(adam.epsilon)},
      {"per_alpha", format_real(per.alpha)},
      {"per_epsilon", format_real(per.priority_epsilon)},
      {"per_beta_start", format_real(per.beta_start)},
      {"per_beta_end", format_real(per.beta_end)},
      {"per_anneal_beta", per.anneal_beta ? "true" : "false"},
      {"per_is_weights", per.use_is_weights ? "true" : "false"},
      {"loss", loss == LossKind::Huber ? "huber" : "squared"},
      {"seed", std::to_string(seed)},
  };
}

namespace {

Eigen::Index argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& q) {
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < q.size(); ++a) {
    if (q[a] > q[best]) best = a;
  }
  return best;
}

// Double-DQN bootstrap for a set of non-terminal next states (columns of `next`).
Eigen::VectorXd bootstrap(const QParams& selector, const QParams& evaluator, const Eigen::MatrixXd& next) {
  const Eigen::MatrixXd q_sel = forward(selector, next).q;
  const Eigen::MatrixXd q_eval = &selector == &evaluator ? q_sel : forward(evaluator, next).q;
  Eigen::VectorXd out(next.cols());
  for (Eigen::Index i = 0; i < next.cols(); ++i) out[i] = q_eval(argmax_lowest(q_sel.col(i)), i);
  return out;
}

Eigen::VectorXd targets_for(const QParams& selector, const QParams& evaluator,
                            std::span<const Transition* const> transitions, double gamma) {
  const auto n = static_cast<Eigen::Index>(transitions.size());
  Eigen::VectorXd y(n);
  std::vector<Eigen::Index> live;
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = transitions[static_cast<std::size_t>(i)]->reward;
    if (!transitions[static_cast<std::size_t>(i)]->terminal()) live.push_back(i);
  }
  if (live.empty() || gamma == 0.0) return y;
  Eigen::MatrixXd next(selector.shape.input_dim, static_cast<Eigen::Index>(live.size()));
  for (std::size_t k = 0; k < live.size(); ++k) {
    next.col(static_cast<Eigen::Index>(k)) = *transitions[static_cast<std::size_t>(live[k])]->next_state;
  }
  const Eigen::VectorXd boot = bootstrap(selector, evaluator, next);
  for (std::size_t k = 0; k < live.size(); ++k) y[live[k]] += gamma * boot[static_cast<Eigen::Index>(k)];
  return y;
}

Eigen::MatrixXd stack_states(std::span<const Transition* const> transitions, int dim) {
  Eigen::MatrixXd s(dim, static_cast<Eigen::Index>(transitions.size()));
  for (std::size_t i = 0; i < transitions.size(); ++i) s.col(static_cast<Eigen::Index>(i)) = transitions[i]->state;
  return s;
}

Transition normalized(const Transition& t, const Normalizer& norm) {
  Transition out = t;
  out.state = norm.apply(t.state);
  if (t.next_state) out.next_state = norm.apply(*t.next_state);
  return out;
}

}  // namespace

Eigen::VectorXd compute_target(const QParams& online, const QParams& target, const SampleBatch& batch, double gamma) {
  require(online.shape == target.shape, ErrorKind::Dimension, "online and target networks differ in shape");
  return targets_for(online, target, batch.transitions, gamma);
}

ValidationMetrics validate(const QModel& model, std::span<const Transition> validation, double gamma,
                           const PolicyScorer* scorer) {
  ValidationMetrics m;
  if (validation.empty()) {
    m.error = "empty validation set";
    return m;
  }
  std::vector<Transition> norm;
  norm.reserve(validation.size());
  for (const auto& t : validation) norm.push_back(normalized(t, model.normalizer));
  std::vector<const Transition*> ptrs;
  ptrs.reserve(norm.size());
  for (const auto& t : norm) ptrs.push_back(&t);

  const Eigen::VectorXd y = targets_for(model.params, model.params, ptrs, gamma);
  const Eigen::MatrixXd q = forward(model.params, stack_states(ptrs, model.params.shape.input_dim)).q;
  double sum = 0.0;
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    sum += std::abs(y[static_cast<Eigen::Index>(i)] - q(ptrs[i]->action, static_cast<Eigen::Index>(i)));
  }
  m.transitions = validation.size();
  m.mean_abs_td = sum / static_cast<double>(validation.size());
  if (scorer) m.simulated_mean_reward = (*scorer)(model);
  m.ok = std::isfinite(m.mean_abs_td);
  if (!m.ok) m.error = "non-finite validation TD error";
  return m;
}

TrainResult train(std::span<const Transition> train_set, std::span<const Transition> validation,
                  const TrainConfig& config, const PolicyScorer* scorer, const TrainObserver* observer) {
  config.validate();
  require(!train_set.empty(), ErrorKind::InsufficientData, "empty training set");
  require(train_set.size() >= config.batch_size, ErrorKind::InsufficientData,
          "training set smaller than one batch");
  const int dim = config.shape.input_dim;
  for (const auto& t : train_set) {
    require(t.state.size() == dim, ErrorKind::Dimension, "training state dimension does not match network input");
    require(t.action >= 0 && t.action < config.shape.num_actions, ErrorKind::Dimension, "action out of range");
  }

  const Normalizer norm = Normalizer::fit(train_set);
  PrioritizedReplay replay(train_set.size(), config.per);
  for (const auto& t : train_set) replay.push(normalized(t, norm));

  QParams online = QParams::initialize(config.shape, derive_seed(config.seed, 0));
  QParams target = copy_params(online);
  Rng rng(derive_seed(config.seed, 1));

  TrainResult result;
  const bool use_scorer = scorer != nullptr;
  const bool use_td = !use_scorer && !validation.empty();
  std::optional<double> best_score;

  // Returns the scalar selection metric (higher is better) and logs it.
  const auto evaluate = [&](std::size_t step) -> std::optional<double> {
    if (!use_scorer && !use_td) return std::nullopt;
    QModel model{online, norm};
    auto m = validate(model, validation, config.gamma, scorer);
    std::optional<double> score;
    std::optional<double> reported;
    if (use_scorer && m.simulated_mean_reward) {
      score = *m.simulated_mean_reward;
      reported = score;
    } else if (m.ok) {
      score = -m.mean_abs_td;
      reported = m.mean_abs_td;
    } else if (use_scorer && validation.empty()) {
      // Scorer without validation transitions: validate() reported the empty set.
      m.simulated_mean_reward = (*scorer)(model);
      score = *m.simulated_mean_reward;
      reported = score;
    }
    if (score && (!best_score || *score > *best_score)) {
      best_score = score;
      result.best = std::move(model);
      result.best_step = step;
      result.best_metrics = m;
    }
    return reported;
  };

  result.best = QModel{online, norm};
  evaluate(0);

  const std::size_t batch_size = config.batch_size;
  std::vector<int> actions(batch_size);
  std::vector<double> td(batch_size);
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    const double beta = config.per.beta_at(step - 1, config.total_steps);
    const SampleBatch batch = replay.sample(batch_size, beta, rng);
    const Eigen::VectorXd y = compute_target(online, target, batch, config.gamma);
    const QOutput out = forward(online, stack_states(batch.transitions, dim));

    double loss = 0.0;
    double mean_q = 0.0;
    for (std::size_t i = 0; i < batch_size; ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      actions[i] = batch.transitions[i]->action;
      const double q = out.q(actions[i], col);
      td[i] = y[col] - q;
      loss += td_loss(td[i], batch.is_weights[i], config.loss);
      mean_q += q;
    }
    loss /= static_cast<double>(batch_size);
    mean_q /= static_cast<double>(batch_size);
    if (!std::isfinite(loss)) throw TrainingDiverged(step, result.best);

    const LayerSet grads = backward(online, out, actions, td, batch.is_weights, config.loss);
    if (!grads.all_finite()) throw TrainingDiverged(step, result.best);
    adam_update(online, grads, config.adam);
    if (!online.weights.all_finite()) throw TrainingDiverged(step, result.best);
    replay.update_priorities(batch.indices, td);

    if (step % config.target_sync_interval == 0) target = copy_params(online);
    if (observer) (*observer)(step, online, target);

    const bool eval_now = step % config.eval_interval == 0 || step == config.total_steps;
    const bool log_now = eval_now || step % config.log_interval == 0;
    if (log_now) {
      TrainLogRow row{step, loss, mean_q, beta, config.adam.lr, std::nullopt};
      if (eval_now) row.val_metric = evaluate(step);
      result.log.push_back(row);
    }
  }

  result.final_model = QModel{online, norm};
  if (!best_score) {
    result.best = result.final_model;
    result.best_step = config.total_steps;
  }
  return result;
}

std::string format_train_log(std::span<const TrainLogRow> rows) {
  std::string out = "step,loss,mean_q,beta,lr,val_metric\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + ',' + format_real(r.loss) + ',' + format_real(r.mean_q) + ',' +
           format_real(r.beta) + ',' + format_real(r.lr) + ',' + (r.val_metric ? format_real(*r.val_metric) : "") +
           '\n';
  }
  return out;
}

}  // namespace morphdose
