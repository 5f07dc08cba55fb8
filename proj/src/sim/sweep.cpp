#include "racestack/sim/sweep.hpp"

#include <exception>

namespace racestack::sim {

namespace {

SweepOutcome run_one(const SweepJob& job) {
  SweepOutcome out;
  try {
    out.result = run_scenario(job.spec, job.options);
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

}  // namespace

std::vector<SweepOutcome> run_sweep_serial(const std::vector<SweepJob>& jobs) {
  std::vector<SweepOutcome> out;
  out.reserve(jobs.size());
  for (const auto& j : jobs) out.push_back(run_one(j));
  return out;
}

std::vector<SweepOutcome> run_sweep(const std::vector<SweepJob>& jobs) {
  std::vector<SweepOutcome> out(jobs.size());
  const auto n = static_cast<std::int64_t>(jobs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = run_one(jobs[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace racestack::sim
