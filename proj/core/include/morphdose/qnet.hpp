#pragma once

// Dueling Q-network with hand-written forward/backward passes and Adam.
//
//   h1 = lrelu(W1 x + b1)            trunk, input -> hidden
//   h2 = lrelu(W2 h1 + b2)           trunk, hidden -> hidden
//   v  = Wvo lrelu(Wvh h2 + bvh) + bvo          value stream -> 1
//   a  = Wao lrelu(Wah h2 + bah) + bao          advantage stream -> num_actions
//   Q(s, k) = v + a_k - mean_j a_j
//
// Every matrix operation works column-wise on batches: a batch of states is an
// input_dim x B matrix.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

#include <Eigen/Core>

namespace morphdose {

struct QNetShape {
  int input_dim = 19;
  int hidden_dim = 64;
  int stream_dim = 32;
  int num_actions = 14;
  double leaky_slope = 0.01;

  friend bool operator==(const QNetShape&, const QNetShape&) = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

enum LayerId : std::size_t { kTrunk1 = 0, kTrunk2, kValueHidden, kValueOut, kAdvantageHidden, kAdvantageOut };
inline constexpr std::size_t kNumLayers = 6;

/// A full set of per-layer tensors. Used for weights, gradients and Adam moments alike.
struct LayerSet {
  std::array<DenseLayer, kNumLayers> layers;

  static LayerSet zeros(const QNetShape& shape);
  DenseLayer& operator[](std::size_t i) { return layers[i]; }
  const DenseLayer& operator[](std::size_t i) const { return layers[i]; }

  std::size_t parameter_count() const;
  bool all_finite() const;
  /// Largest absolute entry over all tensors.
  double max_abs() const;
  void scale(double s);
};

bool bitwise_equal(const LayerSet& a, const LayerSet& b);

struct AdamState {
  LayerSet first_moment;
  LayerSet second_moment;
  std::int64_t step = 0;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct QParams {
  QNetShape shape;
  LayerSet weights;
  AdamState adam;
  /// Bumped on every optimizer step; forward caches remember it to detect staleness.
  std::uint64_t version = 0;
  /// Identifies a parameter lineage (assigned by the factory functions and copy_params).
  std::uint64_t lineage = 0;

  static QParams zeros(const QNetShape& shape);
  /// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static QParams initialize(const QNetShape& shape, std::uint64_t seed);
};

/// Deep copy of the weights with fresh optimizer state and a new lineage.
QParams copy_params(const QParams& src);

struct ForwardCache {
  Eigen::MatrixXd input, z1, h1, z2, h2, zv, hv, za, ha;
  std::uint64_t version = 0;
  std::uint64_t lineage = 0;
};

struct QOutput {
  Eigen::MatrixXd q;          // num_actions x B
  Eigen::RowVectorXd value;   // 1 x B
  Eigen::MatrixXd advantage;  // num_actions x B, before centering
  ForwardCache cache;

  Eigen::VectorXd q_values(Eigen::Index column = 0) const { return q.col(column); }
};

/// `states` is input_dim x B (already normalized). Throws Dimension on a shape mismatch.
QOutput forward(const QParams& params, const Eigen::MatrixXd& states);
Eigen::VectorXd q_values(const QParams& params, const Eigen::VectorXd& state);

enum class LossKind { Huber, Squared };

/// Per-sample loss w * L(delta) with delta = target - Q(s, a); L is delta^2/2, or Huber with
/// threshold 1 (linear beyond |delta| = 1).
double td_loss(double td_error, double is_weight, LossKind kind);

/// Gradient of (1/B) * sum_i w_i * L(delta_i) with respect to every parameter, where only the
/// taken action's Q-value of each column contributes. Throws Internal when the cache was
/// produced by different or since-updated parameters.
LayerSet backward(const QParams& params, const QOutput& out, std::span<const int> actions,
                  std::span<const double> td_errors, std::span<const double> is_weights,
                  LossKind kind = LossKind::Huber);

LayerSet backward(const QParams& params, const QOutput& out, int action, double td_error, double is_weight,
                  LossKind kind = LossKind::Huber);

/// Bias-corrected Adam step applied in place. Throws Numeric if any gradient is non-finite.
void adam_update(QParams& params, const LayerSet& grads, const AdamConfig& config);

}  // namespace morphdose
