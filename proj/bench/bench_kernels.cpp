// Serial vs OpenMP variants of the three data-parallel kernels. Set
// OMP_NUM_THREADS to compare thread counts.

#include <benchmark/benchmark.h>

#include <random>

#include "racestack/orchestration.hpp"
#include "racestack/sim/latency.hpp"
#include "racestack/sim/sweep.hpp"

using namespace racestack;
using namespace std::chrono_literals;

namespace {

orch::RuleGrid six_module_grid() {
  orch::RuleGrid g;
  g.critical = {false, true, false, true, false, false};
  return g;
}

void BM_GridSerial(benchmark::State& st) {
  const auto g = six_module_grid();
  for (auto _ : st) benchmark::DoNotOptimize(orch::evaluate_grid_serial(g));
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * g.size()));
}

void BM_GridParallel(benchmark::State& st) {
  const auto g = six_module_grid();
  for (auto _ : st) benchmark::DoNotOptimize(orch::evaluate_grid_parallel(g));
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * g.size()));
}

std::vector<SimTime> stamps(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 170'000.0);
  std::vector<SimTime> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = SimTime{static_cast<std::int64_t>(i) * 10'000'000 + std::llround(d(rng))};
  return v;
}

void BM_InterArrivalSerial(benchmark::State& st) {
  const auto s = stamps(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(sim::inter_arrival_serial(s, 10ms));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_InterArrivalParallel(benchmark::State& st) {
  const auto s = stamps(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(sim::inter_arrival_parallel(s, 10ms));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

std::vector<sim::SweepJob> crash_jobs() {
  const auto base = sim::load_scenario("planner_crash");
  std::vector<sim::SweepJob> jobs;
  for (int i = 0; i < 8; ++i) {
    sim::SweepJob j{base, {}};
    j.spec.faults[0].activation = from_ms(1000.0 + 500.0 * i);
    j.options.trace = false;
    jobs.push_back(std::move(j));
  }
  return jobs;
}

void BM_SweepSerial(benchmark::State& st) {
  const auto jobs = crash_jobs();
  for (auto _ : st) benchmark::DoNotOptimize(sim::run_sweep_serial(jobs));
}

void BM_SweepParallel(benchmark::State& st) {
  const auto jobs = crash_jobs();
  for (auto _ : st) benchmark::DoNotOptimize(sim::run_sweep(jobs));
}

}  // namespace

BENCHMARK(BM_GridSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GridParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_InterArrivalSerial)->Arg(12'000)->Arg(1'000'000);
BENCHMARK(BM_InterArrivalParallel)->Arg(12'000)->Arg(1'000'000);
BENCHMARK(BM_SweepSerial)->Unit(benchmark::kMillisecond)->Iterations(1);
BENCHMARK(BM_SweepParallel)->Unit(benchmark::kMillisecond)->Iterations(1);

BENCHMARK_MAIN();
