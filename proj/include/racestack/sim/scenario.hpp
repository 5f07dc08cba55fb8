#pragma once

// Scenario files, the simulated stack they run on, and assertion evaluation.
//
// A scenario is JSON:
//   {"name", "description", "duration_ms", "seed", "initial_speed",
//    "wiring": "default" | {"stack": bool, "topics": [...], "modules": [...]},
//    "params": {dotted overrides}, "record": bool,
//    "faults": [{"kind", "target", "at_ms", "delay_ms", "duration_ms"}],
//    "script": [{"at_ms", "cmd", ...}],
//    "assertions": [...], "analysis": {"chain": [...], "period_ms"}}
// See README.md for the command and assertion vocabulary.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "racestack/bus.hpp"
#include "racestack/module.hpp"
#include "racestack/params.hpp"
#include "racestack/sim/error.hpp"
#include "racestack/sim/latency.hpp"

namespace racestack::gate {
class GateNode;
}
namespace racestack::orch {
class SafetyNode;
class WatchdogNode;
}

namespace racestack::sim {

class VehiclePlant;

struct Predicate {
  std::string topic;
  nlohmann::json where = nlohmann::json::object();  // dotted path -> value | {"lt": x, ...}

  bool matches(const Message& m) const;
};

struct Assertion {
  enum class Kind { Within, After, Never, Signal };
  std::string name;
  Kind kind = Kind::Within;
  Predicate predicate;
  SimTime lo{0};
  std::optional<SimTime> hi;
  std::optional<SimTime> expect_at;
  Predicate reference;  // After
  SimTime max_delay{0};
  std::string signal;  // Signal: "module.name"
  std::string op;
  double value = 0.0;
};

struct ScriptEvent {
  SimTime at{0};
  nlohmann::json command;
};

struct Analysis {
  std::vector<std::string> chain;
  SimTime period{0};
};

struct ScenarioSpec {
  std::string name;
  std::string description;
  SimTime duration{0};
  std::uint64_t seed = 0;
  double initial_speed = 0.0;
  bool stack = true;
  std::vector<bus::TopicSpec> topics;  // extra topics (all topics when stack is false)
  std::vector<kit::ModuleSpec> modules;
  nlohmann::json params = nlohmann::json::object();
  bool record = true;
  std::vector<bus::FaultSpec> faults;
  std::vector<ScriptEvent> script;
  std::vector<Assertion> assertions;
  std::optional<Analysis> analysis;
};

// Throws ScenarioInvalid.
ScenarioSpec parse_scenario(const nlohmann::json& doc);
// A bundled scenario name or a path to a JSON file. Throws ScenarioInvalid.
ScenarioSpec load_scenario(std::string_view name_or_path);

std::vector<std::string> bundled_scenario_names();
std::optional<std::string_view> bundled_scenario_text(std::string_view name);

// Throws ProtocolViolation for anything apply_command would refuse.
void validate_command(const nlohmann::json& cmd);

std::vector<bus::TopicSpec> default_topics();
std::vector<kit::ModuleSpec> default_wiring();
// Modules the watchdog supervises in the default stack (recorder included when recording).
std::vector<std::string> watched_modules(const ScenarioSpec& spec);

struct Observation {
  SimTime stamp{0};
  std::string publisher;
  std::shared_ptr<const Message> payload;
};

struct AssertionOutcome {
  std::string name;
  bool passed = false;
  std::optional<SimTime> observed;
  std::string detail;
};

struct ScenarioResult {
  std::string scenario;
  std::uint64_t seed = 0;
  bool passed = false;
  std::vector<AssertionOutcome> assertions;
  std::string trace;
  std::vector<std::uint8_t> log;
  std::uint64_t events = 0;
  std::vector<bus::PanicRecord> panics;
  std::map<std::string, std::map<std::string, double>> signals;  // module -> last frame
  std::map<SafetyActionKind, SimTime> first_action;
  std::optional<SimTime> standstill_at;
  msg::VehicleState final_state;
  std::uint64_t controller_rejections = 0;
  std::map<std::string, std::vector<Observation>> observations;  // probe topics only
  std::optional<ChainLatencyReport> latency;                     // online, when the scenario asks

  // First observation on pred.topic at or after `from` that satisfies pred.
  std::optional<SimTime> first_match(const Predicate& pred, SimTime from = SimTime{0}) const;
  nlohmann::ordered_json summary() const;
};

struct SessionOptions {
  std::optional<std::uint64_t> seed;
  std::vector<std::string> param_documents;  // applied after the scenario's own params
  bool trace = true;
  std::optional<std::filesystem::path> log_path;
};

class Session {
 public:
  explicit Session(ScenarioSpec spec, SessionOptions opts = {});
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  bus::Bus& bus();
  params::ParameterStore& params();
  const ScenarioSpec& spec() const;

  // Runs to the scenario duration.
  void run();
  void run_until(SimTime t);
  ScenarioResult finish();

  // Publishes an operator/basestation command now. Throws ProtocolViolation.
  void apply_command(const nlohmann::json& cmd);

  const VehiclePlant* plant() const;
  const gate::GateNode* gate() const;
  const orch::SafetyNode* safety() const;
  const kit::Module* module(std::string_view id) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

ScenarioResult run_scenario(const ScenarioSpec& spec, SessionOptions opts = {});

}  // namespace racestack::sim
