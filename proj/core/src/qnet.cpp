#include "morphdose/qnet.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <random>

#include "morphdose/error.hpp"
#include "morphdose/seeding.hpp"

namespace morphdose {

namespace {

std::uint64_t next_lineage() {
  static std::atomic<std::uint64_t> counter{1};
  return counter++;
}

// {out, in} per layer.
std::array<std::pair<int, int>, kNumLayers> layer_dims(const QNetShape& s) {
  return {{{s.hidden_dim, s.input_dim},
           {s.hidden_dim, s.hidden_dim},
           {s.stream_dim, s.hidden_dim},
           {1, s.stream_dim},
           {s.stream_dim, s.hidden_dim},
           {s.num_actions, s.stream_dim}}};
}

void check_shape(const QNetShape& s) {
  require(s.input_dim > 0 && s.hidden_dim > 0 && s.stream_dim > 0 && s.num_actions > 0, ErrorKind::Dimension,
          "network dimensions must be positive");
  require(s.leaky_slope >= 0.0 && s.leaky_slope < 1.0, ErrorKind::InvalidParameter,
          "leaky slope must lie in [0,1)");
}

Eigen::MatrixXd leaky_relu(const Eigen::MatrixXd& z, double slope) {
  return z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

Eigen::MatrixXd leaky_relu_grad(const Eigen::MatrixXd& z, double slope) {
  return z.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

bool same_bits(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

LayerSet LayerSet::zeros(const QNetShape& shape) {
  check_shape(shape);
  LayerSet set;
  const auto dims = layer_dims(shape);
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    set.layers[i].weight = Eigen::MatrixXd::Zero(dims[i].first, dims[i].second);
    set.layers[i].bias = Eigen::VectorXd::Zero(dims[i].first);
  }
  return set;
}

std::size_t LayerSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool LayerSet::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

double LayerSet::max_abs() const {
  double m = 0.0;
  for (const auto& l : layers) {
    if (l.weight.size()) m = std::max(m, l.weight.cwiseAbs().maxCoeff());
    if (l.bias.size()) m = std::max(m, l.bias.cwiseAbs().maxCoeff());
  }
  return m;
}

void LayerSet::scale(double s) {
  for (auto& l : layers) {
    l.weight *= s;
    l.bias *= s;
  }
}

bool bitwise_equal(const LayerSet& a, const LayerSet& b) {
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    if (!same_bits(a[i].weight, b[i].weight) || !same_bits(a[i].bias, b[i].bias)) return false;
  }
  return true;
}

QParams QParams::zeros(const QNetShape& shape) {
  QParams p;
  p.shape = shape;
  p.weights = LayerSet::zeros(shape);
  p.adam = AdamState{LayerSet::zeros(shape), LayerSet::zeros(shape), 0};
  p.lineage = next_lineage();
  return p;
}

QParams QParams::initialize(const QNetShape& shape, std::uint64_t seed) {
  QParams p = zeros(shape);
  Rng rng(seed);
  for (auto& l : p.weights.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    // Fill in a fixed (column-major) order so results are reproducible.
    for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = u(rng);
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias[k] = u(rng);
  }
  return p;
}

QParams copy_params(const QParams& src) {
  QParams p;
  p.shape = src.shape;
  p.weights = src.weights;
  p.adam = AdamState{LayerSet::zeros(src.shape), LayerSet::zeros(src.shape), 0};
  p.lineage = next_lineage();
  return p;
}

QOutput forward(const QParams& params, const Eigen::MatrixXd& states) {
  const auto& s = params.shape;
  require(states.rows() == s.input_dim, ErrorKind::Dimension,
          "network expects " + std::to_string(s.input_dim) + " inputs, got " + std::to_string(states.rows()));
  const auto& w = params.weights;
  const double slope = s.leaky_slope;

  QOutput out;
  auto& c = out.cache;
  c.version = params.version;
  c.lineage = params.lineage;
  c.input = states;
  c.z1 = (w[kTrunk1].weight * states).colwise() + w[kTrunk1].bias;
  c.h1 = leaky_relu(c.z1, slope);
  c.z2 = (w[kTrunk2].weight * c.h1).colwise() + w[kTrunk2].bias;
  c.h2 = leaky_relu(c.z2, slope);
  c.zv = (w[kValueHidden].weight * c.h2).colwise() + w[kValueHidden].bias;
  c.hv = leaky_relu(c.zv, slope);
  c.za = (w[kAdvantageHidden].weight * c.h2).colwise() + w[kAdvantageHidden].bias;
  c.ha = leaky_relu(c.za, slope);

  out.value = (w[kValueOut].weight * c.hv).colwise() + w[kValueOut].bias;
  out.advantage = (w[kAdvantageOut].weight * c.ha).colwise() + w[kAdvantageOut].bias;
  const Eigen::RowVectorXd mean_adv = out.advantage.colwise().mean();
  out.q = out.advantage;
  out.q.rowwise() += out.value - mean_adv;
  return out;
}

Eigen::VectorXd q_values(const QParams& params, const Eigen::VectorXd& state) {
  return forward(params, state).q.col(0);
}

double td_loss(double td_error, double is_weight, LossKind kind) {
  const double a = std::abs(td_error);
  if (kind == LossKind::Huber && a > 1.0) return is_weight * (a - 0.5);
  return is_weight * 0.5 * td_error * td_error;
}

LayerSet backward(const QParams& params, const QOutput& out, std::span<const int> actions,
                  std::span<const double> td_errors, std::span<const double> is_weights, LossKind kind) {
  const auto& c = out.cache;
  require(c.lineage == params.lineage && c.version == params.version, ErrorKind::Internal,
          "stale forward cache: parameters changed since forward()");
  const auto batch = out.q.cols();
  require(static_cast<Eigen::Index>(actions.size()) == batch &&
              static_cast<Eigen::Index>(td_errors.size()) == batch &&
              static_cast<Eigen::Index>(is_weights.size()) == batch,
          ErrorKind::Dimension, "backward: batch size mismatch");

  const auto& s = params.shape;
  const auto& w = params.weights;
  const double slope = s.leaky_slope;
  const double inv_batch = 1.0 / static_cast<double>(batch);

  // dL/dQ: nonzero only at the taken action of each column. delta = target - Q, so
  // d(delta^2/2)/dQ = -delta.
  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(s.num_actions, batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int a = actions[static_cast<std::size_t>(i)];
    require(a >= 0 && a < s.num_actions, ErrorKind::Dimension, "backward: action out of range");
    double delta = td_errors[static_cast<std::size_t>(i)];
    if (kind == LossKind::Huber) delta = std::clamp(delta, -1.0, 1.0);
    dq(a, i) = -is_weights[static_cast<std::size_t>(i)] * delta * inv_batch;
  }

  // Q = v + a - mean(a)
  const Eigen::RowVectorXd dv = dq.colwise().sum();
  Eigen::MatrixXd da = dq;
  da.rowwise() -= dv / static_cast<double>(s.num_actions);

  LayerSet g = LayerSet::zeros(s);

  g[kValueOut].weight = dv * c.hv.transpose();
  g[kValueOut].bias(0) = dv.sum();
  const Eigen::MatrixXd dzv = (w[kValueOut].weight.transpose() * dv).cwiseProduct(leaky_relu_grad(c.zv, slope));
  g[kValueHidden].weight = dzv * c.h2.transpose();
  g[kValueHidden].bias = dzv.rowwise().sum();

  g[kAdvantageOut].weight = da * c.ha.transpose();
  g[kAdvantageOut].bias = da.rowwise().sum();
  const Eigen::MatrixXd dza = (w[kAdvantageOut].weight.transpose() * da).cwiseProduct(leaky_relu_grad(c.za, slope));
  g[kAdvantageHidden].weight = dza * c.h2.transpose();
  g[kAdvantageHidden].bias = dza.rowwise().sum();

  const Eigen::MatrixXd dh2 = w[kValueHidden].weight.transpose() * dzv + w[kAdvantageHidden].weight.transpose() * dza;
  const Eigen::MatrixXd dz2 = dh2.cwiseProduct(leaky_relu_grad(c.z2, slope));
  g[kTrunk2].weight = dz2 * c.h1.transpose();
  g[kTrunk2].bias = dz2.rowwise().sum();

  const Eigen::MatrixXd dz1 = (w[kTrunk2].weight.transpose() * dz2).cwiseProduct(leaky_relu_grad(c.z1, slope));
  g[kTrunk1].weight = dz1 * c.input.transpose();
  g[kTrunk1].bias = dz1.rowwise().sum();
  return g;
}

LayerSet backward(const QParams& params, const QOutput& out, int action, double td_error, double is_weight,
                  LossKind kind) {
  require(out.q.cols() == 1, ErrorKind::Dimension, "single-sample backward needs a single-column forward");
  const int a[] = {action};
  const double d[] = {td_error};
  const double wt[] = {is_weight};
  return backward(params, out, a, d, wt, kind);
}

void adam_update(QParams& params, const LayerSet& grads, const AdamConfig& config) {
  require(grads.all_finite(), ErrorKind::Numeric, "non-finite gradient; aborting training step");
  auto& st = params.adam;
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  const auto step = [&](auto& theta, const auto& g, auto& m, auto& v) {
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseAbs2();
    const auto m_hat = m / bc1;
    const auto v_hat = v / bc2;
    theta.array() -= config.lr * m_hat.array() / (v_hat.array().sqrt() + config.epsilon);
  };
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    step(params.weights[i].weight, grads[i].weight, st.first_moment[i].weight, st.second_moment[i].weight);
    step(params.weights[i].bias, grads[i].bias, st.first_moment[i].bias, st.second_moment[i].bias);
  }
  ++params.version;
}

}  // namespace morphdose
