#pragma once

// Independent scenario runs in parallel. Every run owns its bus, store and
// plant, so results match the serial loop exactly.

#include <optional>
#include <string>
#include <vector>

#include "racestack/sim/scenario.hpp"

namespace racestack::sim {

struct SweepJob {
  ScenarioSpec spec;
  SessionOptions options;
};

struct SweepOutcome {
  std::optional<ScenarioResult> result;
  std::string error;  // set when the run threw
};

std::vector<SweepOutcome> run_sweep_serial(const std::vector<SweepJob>& jobs);
std::vector<SweepOutcome> run_sweep(const std::vector<SweepJob>& jobs);

}  // namespace racestack::sim
