#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "morphdose/qnet.hpp"

using namespace morphdose;

namespace {

Eigen::MatrixXd random_states(Eigen::Index batch) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::MatrixXd::NullaryExpr(19, batch, [&] { return n(rng); });
}

void BM_Forward(benchmark::State& state) {
  const auto p = QParams::initialize(QNetShape{}, 1);
  const auto states = random_states(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(forward(p, states).q.data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(32)->Arg(256);

void BM_ForwardBackward(benchmark::State& state) {
  const auto p = QParams::initialize(QNetShape{}, 2);
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto states = random_states(state.range(0));
  std::vector<int> actions(batch);
  std::vector<double> td(batch), w(batch, 1.0);
  for (std::size_t i = 0; i < batch; ++i) {
    actions[i] = static_cast<int>(i % 14);
    td[i] = 0.1 * static_cast<double>(i % 7) - 0.3;
  }
  for (auto _ : state) {
    const auto out = forward(p, states);
    benchmark::DoNotOptimize(backward(p, out, actions, td, w).max_abs());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(128);

void BM_AdamStep(benchmark::State& state) {
  auto p = QParams::initialize(QNetShape{}, 3);
  const auto states = random_states(32);
  std::vector<int> actions(32, 2);
  std::vector<double> td(32, 0.05), w(32, 1.0);
  const auto grads = backward(p, forward(p, states), actions, td, w);
  AdamConfig config;
  config.lr = 1e-9;
  for (auto _ : state) adam_update(p, grads, config);
}
BENCHMARK(BM_AdamStep);

}  // namespace
