#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace racestack::sim {

enum class SimErrc {
  InvalidDt,
  InvalidActuation,
  ScenarioInvalid,
  AssertionFailed,
  MissingTopic,
  InsufficientSamples,
  PortInUse,
  ProtocolViolation,
  NotAtStandstill,
};

std::string_view to_string(SimErrc c);

class SimError : public std::runtime_error {
 public:
  SimError(SimErrc code, const std::string& what);
  SimErrc code() const noexcept { return code_; }

 private:
  SimErrc code_;
};

}  // namespace racestack::sim
