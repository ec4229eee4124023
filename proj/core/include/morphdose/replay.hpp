#pragma once

// Proportional prioritized replay over a binary sum-tree.

#include <cstddef>
#include <span>
#include <vector>

#include "morphdose/mdp.hpp"
#include "morphdose/seeding.hpp"

namespace morphdose {

/// Complete binary tree over `capacity` leaves (capacity is a power of two). Node 1 is the
/// root, node i has children 2i and 2i+1, leaf slot k lives at node capacity + k. Internal
/// nodes hold both the sum and the max of their subtree.
class SumTree {
 public:
  /// Capacity is rounded up to a power of two (minimum 1).
  explicit SumTree(std::size_t min_capacity);

  std::size_t capacity() const { return capacity_; }

  /// Throws InvalidParameter for negative or non-finite priorities, Internal for a bad slot.
  void set(std::size_t slot, double priority);
  double leaf(std::size_t slot) const;
  double total() const { return sum_[1]; }
  double max_leaf() const { return max_[1]; }

  /// Leaf slot whose prefix-sum interval contains u, for u in [0, total()). Never returns a
  /// zero-priority leaf while total() > 0.
  std::size_t find(double u) const;

  /// Largest relative deviation of any internal node from the sum of its children.
  double audit() const;

  /// Raw node access for inspection (1-based, 2*capacity entries).
  double node_sum(std::size_t node) const { return sum_[node]; }

 private:
  std::size_t capacity_;
  std::vector<double> sum_;
  std::vector<double> max_;
};

struct PerConfig {
  double alpha = 0.6;
  double priority_epsilon = 1e-3;
  double beta_start = 0.4;
  double beta_end = 1.0;
  bool anneal_beta = true;
  bool use_is_weights = true;

  /// beta for training step `step` of `total_steps` (linear from start to end).
  double beta_at(std::size_t step, std::size_t total_steps) const;
};

struct SampleBatch {
  std::vector<const Transition*> transitions;
  std::vector<std::size_t> indices;
  std::vector<double> is_weights;

  std::size_t size() const { return indices.size(); }
};

class PrioritizedReplay {
 public:
  PrioritizedReplay(std::size_t capacity, const PerConfig& config);

  /// Stores t with the current max leaf priority (1.0 when empty), overwriting the oldest
  /// entry once full. Returns the slot used.
  std::size_t push(Transition t);

  /// Stratified proportional sampling: [0, total) is cut into batch_size equal strata and
  /// one point is drawn uniformly in each. Weights are (N * P(i))^-beta divided by the batch
  /// maximum. Throws NotReady when fewer than batch_size transitions are stored.
  SampleBatch sample(std::size_t batch_size, double beta, Rng& rng) const;

  /// priority <- (|td_error| + epsilon)^alpha for each listed slot.
  void update_priorities(std::span<const std::size_t> indices, std::span<const double> td_errors);

  /// Stores an already-exponentiated priority directly.
  void set_priority(std::size_t index, double priority);

  double priority_for(double td_error) const;

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return tree_.capacity(); }
  const SumTree& tree() const { return tree_; }
  const Transition& at(std::size_t index) const;

 private:
  PerConfig config_;
  SumTree tree_;
  std::vector<Transition> data_;
  std::size_t write_cursor_ = 0;
  std::size_t size_ = 0;
};

}  // namespace morphdose
