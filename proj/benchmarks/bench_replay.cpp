#include <random>

#include <benchmark/benchmark.h>

#include "morphdose/replay.hpp"
#include "morphdose/seeding.hpp"

using namespace morphdose;

namespace {

void BM_SumTreeSet(benchmark::State& state) {
  SumTree tree(static_cast<std::size_t>(state.range(0)));
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> slot(0, tree.capacity() - 1);
  std::uniform_real_distribution<double> pr(0.01, 2.0);
  for (auto _ : state) tree.set(slot(rng), pr(rng));
  benchmark::DoNotOptimize(tree.total());
}
BENCHMARK(BM_SumTreeSet)->Arg(1 << 10)->Arg(1 << 17);

void BM_SumTreeFind(benchmark::State& state) {
  SumTree tree(static_cast<std::size_t>(state.range(0)));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> pr(0.01, 2.0);
  for (std::size_t i = 0; i < tree.capacity(); ++i) tree.set(i, pr(rng));
  std::uniform_real_distribution<double> u(0.0, tree.total());
  for (auto _ : state) benchmark::DoNotOptimize(tree.find(u(rng)));
}
BENCHMARK(BM_SumTreeFind)->Arg(1 << 10)->Arg(1 << 17);

void BM_ReplaySampleAndUpdate(benchmark::State& state) {
  PrioritizedReplay replay(static_cast<std::size_t>(state.range(0)), PerConfig{});
  for (std::int64_t i = 0; i < state.range(0); ++i) {
    Transition t;
    t.state = Eigen::VectorXd::Zero(19);
    t.action = static_cast<int>(i % 14);
    t.reward = 0.5;
    t.hour = static_cast<int>(i);
    replay.push(std::move(t));
  }
  Rng rng(3);
  std::vector<double> td(32);
  for (auto _ : state) {
    const auto batch = replay.sample(32, 0.5, rng);
    for (std::size_t i = 0; i < td.size(); ++i) td[i] = 0.01 * static_cast<double>(batch.indices[i] % 97);
    replay.update_priorities(batch.indices, td);
  }
}
BENCHMARK(BM_ReplaySampleAndUpdate)->Arg(1 << 14)->Arg(1 << 17);

}  // namespace
