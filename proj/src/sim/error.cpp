#include "racestack/sim/error.hpp"

namespace racestack::sim {

std::string_view to_string(SimErrc c) {
  switch (c) {
    case SimErrc::InvalidDt: return "InvalidDt";
    case SimErrc::InvalidActuation: return "InvalidActuation";
    case SimErrc::ScenarioInvalid: return "ScenarioInvalid";
    case SimErrc::AssertionFailed: return "AssertionFailed";
    case SimErrc::MissingTopic: return "MissingTopic";
    case SimErrc::InsufficientSamples: return "InsufficientSamples";
    case SimErrc::PortInUse: return "PortInUse";
    case SimErrc::ProtocolViolation: return "ProtocolViolation";
    case SimErrc::NotAtStandstill: return "NotAtStandstill";
  }
  return "?";
}

SimError::SimError(SimErrc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

}  // namespace racestack::sim
