#include "morphdose/replay.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "morphdose/error.hpp"

namespace morphdose {

SumTree::SumTree(std::size_t min_capacity)
    : capacity_(std::bit_ceil(std::max<std::size_t>(min_capacity, 1))),
      sum_(2 * capacity_, 0.0),
      max_(2 * capacity_, 0.0) {}

void SumTree::set(std::size_t slot, double priority) {
  require(slot < capacity_, ErrorKind::Internal, "sum-tree slot out of range");
  require(std::isfinite(priority) && priority >= 0.0, ErrorKind::InvalidParameter,
          "priority must be finite and non-negative");
  std::size_t node = capacity_ + slot;
  sum_[node] = priority;
  max_[node] = priority;
  // Recompute from children rather than adding deltas, so sums never drift.
  for (node /= 2; node >= 1; node /= 2) {
    sum_[node] = sum_[2 * node] + sum_[2 * node + 1];
    max_[node] = std::max(max_[2 * node], max_[2 * node + 1]);
  }
}

double SumTree::leaf(std::size_t slot) const {
  require(slot < capacity_, ErrorKind::Internal, "sum-tree slot out of range");
  return sum_[capacity_ + slot];
}

std::size_t SumTree::find(double u) const {
  std::size_t node = 1;
  while (node < capacity_) {
    const std::size_t left = 2 * node;
    const std::size_t right = left + 1;
    if (sum_[right] <= 0.0 || (u < sum_[left] && sum_[left] > 0.0)) {
      node = left;
    } else {
      u -= sum_[left];
      node = right;
    }
  }
  return node - capacity_;
}

double SumTree::audit() const {
  double worst = 0.0;
  for (std::size_t node = 1; node < capacity_; ++node) {
    const double children = sum_[2 * node] + sum_[2 * node + 1];
    const double denom = std::max(std::abs(children), 1e-300);
    worst = std::max(worst, std::abs(sum_[node] - children) / denom);
  }
  return worst;
}

double PerConfig::beta_at(std::size_t step, std::size_t total_steps) const {
  if (!anneal_beta || total_steps == 0) return beta_start;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return beta_start + frac * (beta_end - beta_start);
}

PrioritizedReplay::PrioritizedReplay(std::size_t capacity, const PerConfig& config)
    : config_(config), tree_(capacity), data_(tree_.capacity()) {
  require(config.alpha >= 0.0 && config.priority_epsilon > 0.0, ErrorKind::InvalidParameter,
          "PER needs alpha >= 0 and epsilon > 0");
}

std::size_t PrioritizedReplay::push(Transition t) {
  const double priority = size_ == 0 ? 1.0 : tree_.max_leaf();
  const std::size_t slot = write_cursor_;
  data_[slot] = std::move(t);
  tree_.set(slot, priority > 0.0 ? priority : 1.0);
  write_cursor_ = (write_cursor_ + 1) % tree_.capacity();
  size_ = std::min(size_ + 1, tree_.capacity());
  return slot;
}

SampleBatch PrioritizedReplay::sample(std::size_t batch_size, double beta, Rng& rng) const {
  require(batch_size > 0, ErrorKind::InvalidParameter, "batch size must be positive");
  require(size_ >= batch_size, ErrorKind::NotReady,
          "replay holds " + std::to_string(size_) + " transitions, batch needs " + std::to_string(batch_size));
  const double total = tree_.total();
  require(total > 0.0, ErrorKind::NotReady, "all priorities are zero");

  SampleBatch batch;
  batch.transitions.reserve(batch_size);
  batch.indices.reserve(batch_size);
  batch.is_weights.reserve(batch_size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double segment = total / static_cast<double>(batch_size);
  const double top = std::nextafter(total, 0.0);
  const double n = static_cast<double>(size_);
  double max_weight = 0.0;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const double u = std::min(top, segment * (static_cast<double>(i) + unit(rng)));
    const std::size_t slot = tree_.find(u);
    const double p = tree_.leaf(slot) / total;
    const double w = config_.use_is_weights ? std::pow(n * p, -beta) : 1.0;
    max_weight = std::max(max_weight, w);
    batch.indices.push_back(slot);
    batch.transitions.push_back(&data_[slot]);
    batch.is_weights.push_back(w);
  }
  for (auto& w : batch.is_weights) w /= max_weight;
  return batch;
}

double PrioritizedReplay::priority_for(double td_error) const {
  return std::pow(std::abs(td_error) + config_.priority_epsilon, config_.alpha);
}

void PrioritizedReplay::update_priorities(std::span<const std::size_t> indices, std::span<const double> td_errors) {
  require(indices.size() == td_errors.size(), ErrorKind::Internal, "indices/td_errors length mismatch");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < size_, ErrorKind::Internal, "replay index out of range");
    tree_.set(indices[i], priority_for(td_errors[i]));
  }
}

void PrioritizedReplay::set_priority(std::size_t index, double priority) {
  require(index < size_, ErrorKind::Internal, "replay index out of range");
  tree_.set(index, priority);
}

const Transition& PrioritizedReplay::at(std::size_t index) const {
  require(index < size_, ErrorKind::Internal, "replay index out of range");
  return data_[index];
}

}  // namespace morphdose
