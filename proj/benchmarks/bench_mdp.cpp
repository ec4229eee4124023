#include <benchmark/benchmark.h>

#include "morphdose/cohort_synth.hpp"
#include "morphdose/mdp.hpp"

using namespace morphdose;

namespace {

void BM_Reward(benchmark::State& state) {
  double hr = 50.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(reward(hr, 16.0, 4.0));
    hr = hr > 120.0 ? 50.0 : hr + 0.37;
  }
}
BENCHMARK(BM_Reward);

void BM_EpisodeToTransitions(benchmark::State& state) {
  const auto cohort = generate_cohort(1, 72, "clinician", 5);
  EpisodeLog ep;
  ep.admission_id = cohort[0].admission_id;
  for (const auto& h : cohort[0].hours) ep.records.push_back(h.observed);
  for (auto _ : state) benchmark::DoNotOptimize(episode_to_transitions(ep).size());
  state.SetItemsProcessed(state.iterations() * 71);
}
BENCHMARK(BM_EpisodeToTransitions);

void BM_GenerateCohort(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(generate_cohort(20, 72, "clinician", 9).size());
}
BENCHMARK(BM_GenerateCohort)->Unit(benchmark::kMillisecond);

}  // namespace
