#pragma once

// Reference rule table written from the rule prose, independent of classify().
// A case is decoded from its grid index here as well, so a layout slip in the
// implementation shows up as a mismatch.

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace oracle {

enum Action : std::uint8_t { kNominal = 0, kSafeStop = 1, kEmergencyStop = 2, kHardEmergency = 3 };
enum Level : std::uint8_t { kOk = 0, kWarn = 1, kError = 2, kStale = 3 };
enum BehaviorCode : std::uint8_t { kNone = 0, kFast = 1, kSlow = 2, kPit = 3, kStop = 4 };

struct Case {
  std::vector<std::uint8_t> levels;
  bool trajectory_valid, tracking_ok, localization_ok, link_ok, lateral_ok;
  std::uint8_t behavior;
};

inline Case decode(std::size_t index, std::size_t modules) {
  Case c{};
  for (std::size_t m = 0; m < modules; ++m) {
    c.levels.push_back(static_cast<std::uint8_t>(index & 3u));
    index >>= 2;
  }
  c.trajectory_valid = index & 1u;
  c.tracking_ok = (index >> 1) & 1u;
  c.localization_ok = (index >> 2) & 1u;
  c.link_ok = (index >> 3) & 1u;
  c.lateral_ok = (index >> 4) & 1u;
  c.behavior = static_cast<std::uint8_t>((index >> 5) % 5);
  return c;
}

// Row = which rule groups fired (hard, emergency, safe); value = resulting action.
inline constexpr std::array<Action, 8> kTable = {
    /* ---  */ kNominal,
    /* --S  */ kSafeStop,
    /* -E-  */ kEmergencyStop,
    /* -ES  */ kEmergencyStop,
    /* H--  */ kHardEmergency,
    /* H-S  */ kHardEmergency,
    /* HE-  */ kHardEmergency,
    /* HES  */ kHardEmergency,
};

inline Action expected(const Case& c, const std::vector<bool>& critical) {
  bool critical_down = false, other_down = false;
  for (std::size_t m = 0; m < c.levels.size(); ++m) {
    const bool down = c.levels[m] == kError || c.levels[m] == kStale;
    if (down && critical[m]) critical_down = true;
    if (down && !critical[m]) other_down = true;
  }
  const bool hard = critical_down || !c.lateral_ok || !c.localization_ok;
  const bool emergency = !c.trajectory_valid || !c.tracking_ok;
  const bool safe = other_down || !c.link_ok || c.behavior == kStop;
  return kTable[(hard ? 4 : 0) | (emergency ? 2 : 0) | (safe ? 1 : 0)];
}

}  // namespace oracle
