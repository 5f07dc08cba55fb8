#pragma once

// Watchdog, safety state machine and race-control abstraction, plus the bus
// nodes that run them on 20 ms timers.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "racestack/bus.hpp"
#include "racestack/messages.hpp"
#include "racestack/params.hpp"

namespace racestack::orch {

enum class OrchErrc { UnknownModule, DuplicateModule, UnknownFlag, NotAtStandstill, NotConfirmed };

std::string_view to_string(OrchErrc c);

class OrchError : public std::runtime_error {
 public:
  OrchError(OrchErrc code, const std::string& what);
  OrchErrc code() const noexcept { return code_; }

 private:
  OrchErrc code_;
};

// --- watchdog ---------------------------------------------------------------

struct WatchedModule {
  std::string id;
  bool critical = false;
};

class Watchdog {
 public:
  explicit Watchdog(std::vector<WatchedModule> modules, SimTime status_timeout = std::chrono::milliseconds(100));

  // Latest reception wins, whatever the status stamp says.
  void ingest(const msg::ModuleStatus& status, SimTime received_at);
  msg::SoftwareStateReport cycle(SimTime now);

  const std::vector<WatchedModule>& modules() const { return modules_; }
  void set_status_timeout(SimTime t) { timeout_ = t; }

 private:
  struct Entry {
    std::optional<DiagnosticLevel> level;
    std::string detail;
    SimTime received{0};
  };
  std::vector<WatchedModule> modules_;
  std::map<std::string, Entry, std::less<>> entries_;
  SimTime timeout_;
  std::uint64_t cycle_ = 0;
};

// --- rules ------------------------------------------------------------------

struct ModuleLevel {
  std::string_view id;
  DiagnosticLevel level = DiagnosticLevel::Ok;
  bool critical = false;
};

struct RuleThresholds {
  double lateral_offset_max = 2.0;  // m
};

// Most severe triggered rule; a pure function of its inputs.
SafetyActionKind classify(std::span<const ModuleLevel> modules, const msg::DrivingConditions& cond,
                          Behavior behavior, const RuleThresholds& th);

struct RuleResult {
  SafetyActionKind action = SafetyActionKind::Nominal;
  std::string reason;  // empty only for Nominal
};

RuleResult evaluate_rules(std::span<const ModuleLevel> modules, const msg::DrivingConditions& cond,
                          Behavior behavior, const RuleThresholds& th);

// --- state machine ----------------------------------------------------------

// TwoPhase reproduces a known defect where the state machine reacts one cycle late.
enum class ResolutionMode { SingleCycle, TwoPhase };

struct TargetSpeeds {
  double drive_fast = 50.0;
  double drive_slow = 20.0;
  double pit = 12.0;
};

struct StateMachineConfig {
  std::set<std::string, std::less<>> critical{"control", "state_estimation"};
  RuleThresholds thresholds;
  TargetSpeeds speeds;
  double standstill_speed = 0.1;
  ResolutionMode mode = ResolutionMode::SingleCycle;
};

class SafetyStateMachine {
 public:
  explicit SafetyStateMachine(StateMachineConfig cfg = {});

  msg::SafetyAction step(const msg::SoftwareStateReport& report, const msg::DrivingConditions& cond,
                         Behavior behavior);

  // Clears the HardEmergency latch. Throws NotAtStandstill / NotConfirmed.
  void reset_hard_emergency(double speed, bool confirmed);

  bool armed() const { return armed_; }
  bool hard_latched() const { return hard_latched_; }
  bool estop_latched() const { return estop_latched_; }
  StateMachineConfig& config() { return cfg_; }
  const StateMachineConfig& config() const { return cfg_; }

 private:
  msg::SafetyAction resolve(const msg::SoftwareStateReport& report, const msg::DrivingConditions& cond,
                            Behavior behavior);
  double target_speed(SafetyActionKind a, Behavior b) const;

  StateMachineConfig cfg_;
  bool armed_ = false;
  bool hard_latched_ = false;
  std::string hard_reason_;
  bool estop_latched_ = false;
  std::string estop_reason_;
  std::optional<msg::SafetyAction> pending_;  // TwoPhase only
};

// --- race control -----------------------------------------------------------

Behavior default_flag_behavior(RaceFlagCode flag);

// Translates series-specific flag codes into behavior requests. The mapping is
// local to this class and can be swapped without touching the state machine.
class RaceControl {
 public:
  using Mapping = std::function<std::optional<Behavior>(std::int32_t code)>;
  static std::optional<Behavior> default_mapping(std::int32_t code);

  explicit RaceControl(Mapping mapping = default_mapping) : mapping_(std::move(mapping)) {}

  // Throws UnknownFlag and keeps the previous request.
  msg::BehaviorRequest translate(std::int32_t code);
  const msg::BehaviorRequest& current() const { return current_; }

 private:
  Mapping mapping_;
  msg::BehaviorRequest current_{Behavior::None, BehaviorSource::RaceControl};
};

msg::BehaviorRequest arbitrate_behavior(const msg::BehaviorRequest& team, const msg::BehaviorRequest& race_control);

// --- exhaustive rule grid (OpenMP) -----------------------------------------

// Enumerates every combination of module levels, the five condition booleans
// (trajectory_valid, tracking_ok, localization_ok, link_ok, lateral_offset_ok)
// and all behaviors. Index layout: levels (base 4, module 0 least significant),
// then condition bits, then behavior.
struct RuleGrid {
  static constexpr std::size_t kConditionBits = 5;
  static constexpr std::size_t kBehaviors = 5;

  std::vector<bool> critical;  // one entry per module
  RuleThresholds thresholds;

  std::size_t module_count() const { return critical.size(); }
  std::size_t size() const;

  struct Case {
    std::vector<DiagnosticLevel> levels;
    msg::DrivingConditions cond;
    Behavior behavior = Behavior::None;
  };
  Case case_at(std::size_t index) const;
  SafetyActionKind evaluate(std::size_t index) const;
};

std::vector<SafetyActionKind> evaluate_grid_serial(const RuleGrid& grid);
std::vector<SafetyActionKind> evaluate_grid_parallel(const RuleGrid& grid);

// --- bus nodes --------------------------------------------------------------

struct Topics {
  std::string status = "/diagnostics/status";
  std::string report = "/orchestration/software_state";
  std::string action = "/orchestration/safety_action";
  std::string emergency = "/orchestration/emergency";
  std::string conditions = "/orchestration/conditions";
  std::string team_behavior = "/behavior/team";
  std::string race_control_behavior = "/behavior/race_control";
  std::string race_flag = "/race_control/flag";
  std::string operator_command = "/operator/command";
};

// Declares watchdog.* and sm.* parameters (idempotent).
void declare_parameters(params::ParameterStore& store);

class WatchdogNode {
 public:
  WatchdogNode(bus::Bus& bus, params::ParameterStore& store, std::vector<WatchedModule> modules,
               const Topics& topics = {});
  const Watchdog& watchdog() const { return wd_; }
  std::uint64_t unknown_statuses() const { return unknown_; }

 private:
  bus::Bus* bus_;
  params::ParameterStore* store_;
  Watchdog wd_;
  bus::PublisherHandle report_pub_;
  std::uint64_t unknown_ = 0;
};

class SafetyNode {
 public:
  // Thresholds, speeds and the resolution mode come from the sm.* parameters and
  // are re-read every cycle.
  SafetyNode(bus::Bus& bus, params::ParameterStore& store,
             std::set<std::string, std::less<>> critical = {"control", "state_estimation"},
             const Topics& topics = {});

  const SafetyStateMachine& machine() const { return sm_; }
  const msg::SafetyAction& last_action() const { return last_; }
  Behavior arbitrated_behavior() const;
  std::uint64_t rejected_resets() const { return rejected_resets_; }

 private:
  void cycle(SimTime now);
  void sync_parameters();

  bus::Bus* bus_;
  params::ParameterStore* store_;
  SafetyStateMachine sm_;
  std::optional<msg::SoftwareStateReport> report_;
  msg::DrivingConditions cond_{};
  std::optional<SimTime> conditions_rx_;
  msg::BehaviorRequest team_{Behavior::None, BehaviorSource::Team};
  msg::BehaviorRequest rc_{Behavior::None, BehaviorSource::RaceControl};
  msg::SafetyAction last_{};
  bus::PublisherHandle action_pub_;
  bus::PublisherHandle emergency_pub_;
  std::uint64_t rejected_resets_ = 0;
};

class RaceControlNode {
 public:
  RaceControlNode(bus::Bus& bus, const Topics& topics = {}, RaceControl rc = RaceControl{});
  const RaceControl& race_control() const { return rc_; }
  std::uint64_t rejected_flags() const { return rejected_; }

 private:
  RaceControl rc_;
  bus::PublisherHandle pub_;
  std::uint64_t rejected_ = 0;
};

}  // namespace racestack::orch
