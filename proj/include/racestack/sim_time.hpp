#pragma once

#include <chrono>
#include <cstdint>

namespace racestack {

// Virtual nanoseconds since executor start.
using SimTime = std::chrono::nanoseconds;

using namespace std::chrono_literals;

constexpr SimTime from_ms(double ms) {
  return SimTime{static_cast<std::int64_t>(ms * 1e6 + (ms >= 0 ? 0.5 : -0.5))};
}

constexpr double to_ms(SimTime t) { return static_cast<double>(t.count()) / 1e6; }
constexpr double to_seconds(SimTime t) { return static_cast<double>(t.count()) / 1e9; }

}  // namespace racestack
