#pragma once

// Fixed interface message types. Every topic in the stack carries exactly one
// of these; the variant index doubles as the wire type tag.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "racestack/sim_time.hpp"

namespace racestack {

// Ordered for aggregation: OK < WARN < ERROR < STALE.
enum class DiagnosticLevel : std::uint8_t { Ok = 0, Warn = 1, Error = 2, Stale = 3 };

std::string_view to_string(DiagnosticLevel level);
std::optional<DiagnosticLevel> parse_level(std::string_view s);

enum class SafetyActionKind : std::uint8_t {
  Nominal = 0,
  SafeStop = 1,
  EmergencyStop = 2,
  HardEmergency = 3,
};

std::string_view to_string(SafetyActionKind a);
std::optional<SafetyActionKind> parse_action(std::string_view s);

// Declaration order is restrictiveness order: None < DriveFast < ... < Stop.
enum class Behavior : std::uint8_t { None = 0, DriveFast = 1, DriveSlow = 2, Pit = 3, Stop = 4 };
enum class BehaviorSource : std::uint8_t { Team = 0, RaceControl = 1 };

std::string_view to_string(Behavior b);
std::optional<Behavior> parse_behavior(std::string_view s);

enum class RaceFlagCode : std::int32_t { Green = 0, Yellow = 1, Red = 2, Checkered = 3, PitOrder = 4 };

std::optional<RaceFlagCode> parse_flag(std::string_view s);

enum class GateMode : std::uint8_t {
  Autonomous = 0,
  ManualDriving = 1,
  ManualOverrideLongitudinal = 2,
  HardEmergency = 3,
};

std::string_view to_string(GateMode m);

namespace msg {

struct Sample {
  double value = 0.0;
};

// Sensor sample; the simulated driver samples vehicle truth.
struct ImuSample {
  double s = 0.0;
  double lateral_offset = 0.0;
  double speed = 0.0;
  double accel = 0.0;
};

struct Odometry {
  double s = 0.0;
  double lateral_offset = 0.0;
  double speed = 0.0;
  bool valid = true;
};

struct VehicleState {
  double position_s = 0.0;
  double lateral_offset = 0.0;
  double speed = 0.0;
  double brake_pressure_applied = 0.0;
  double throttle_applied = 0.0;
};

enum class TrajectoryKind : std::uint8_t { Performance = 0, Emergency = 1 };

struct TrajectoryPoint {
  double s = 0.0;
  double speed_target = 0.0;
};

struct Trajectory {
  TrajectoryKind kind = TrajectoryKind::Performance;
  std::vector<TrajectoryPoint> points;
  SimTime stamp{0};
  std::uint64_t id = 0;
};

// A performance trajectory and the emergency trajectory computed alongside it.
struct TrajectorySet {
  Trajectory performance;
  Trajectory emergency;
};

struct ActuationCommand {
  double throttle = 0.0;        // [0, 1]
  double brake_pressure = 0.0;  // bar
  double steering_angle = 0.0;  // rad
  SimTime stamp{0};
  std::uint64_t sequence = 0;
};

struct ModuleStatus {
  std::string module_id;
  DiagnosticLevel level = DiagnosticLevel::Ok;
  std::string detail;
  SimTime stamp{0};
};

struct ReportEntry {
  DiagnosticLevel level = DiagnosticLevel::Stale;
  std::string detail;
  bool known = false;  // false until the first status arrives
};

struct SoftwareStateReport {
  std::uint64_t cycle = 0;
  SimTime stamp{0};
  std::map<std::string, ReportEntry> modules;
};

struct SafetyAction {
  SafetyActionKind action = SafetyActionKind::Nominal;
  std::string reason;
  double target_speed = 0.0;
};

struct BehaviorRequest {
  Behavior request = Behavior::None;
  BehaviorSource source = BehaviorSource::Team;
};

// Raw code so unknown values can travel the wire and be rejected by the abstraction.
struct RaceFlag {
  std::int32_t code = 0;
};

struct OperatorInput {
  double throttle = 0.0;
  double brake = 0.0;
  double steering = 0.0;
  bool override_active = false;
  SimTime stamp{0};
};

struct OperatorCommand {
  enum class Kind : std::uint8_t { ResetHardEmergency = 0, ManualMode = 1 };
  Kind kind = Kind::ResetHardEmergency;
  bool enable = false;
  bool confirmed = false;
};

struct DrivingConditions {
  bool trajectory_valid = true;
  bool tracking_ok = true;
  double lateral_offset = 0.0;
  bool localization_ok = true;
  bool basestation_link_ok = true;
  double speed = 0.0;  // used for standstill latching decisions
};

struct EmergencyInstruction {
  std::string reason;
};

struct GateState {
  GateMode mode = GateMode::Autonomous;
  std::string reason;
};

struct SignalSchemaMsg {
  std::uint64_t schema_id = 0;
  std::vector<std::string> names;
  std::string source_module;
};

struct SignalFrameMsg {
  std::uint64_t schema_id = 0;
  SimTime stamp{0};
  std::vector<double> values;
  bool flagged = false;
};

}  // namespace msg

using Message = std::variant<msg::Sample, msg::ImuSample, msg::Odometry, msg::VehicleState,
                             msg::TrajectorySet, msg::ActuationCommand, msg::ModuleStatus,
                             msg::SoftwareStateReport, msg::SafetyAction, msg::BehaviorRequest,
                             msg::RaceFlag, msg::OperatorInput, msg::OperatorCommand,
                             msg::DrivingConditions, msg::EmergencyInstruction, msg::GateState,
                             msg::SignalSchemaMsg, msg::SignalFrameMsg>;

enum class MessageType : std::uint16_t {
  Sample = 0,
  ImuSample,
  Odometry,
  VehicleState,
  TrajectorySet,
  ActuationCommand,
  ModuleStatus,
  SoftwareStateReport,
  SafetyAction,
  BehaviorRequest,
  RaceFlag,
  OperatorInput,
  OperatorCommand,
  DrivingConditions,
  EmergencyInstruction,
  GateState,
  SignalSchema,
  SignalFrame,
};

inline constexpr std::size_t kMessageTypeCount = std::variant_size_v<Message>;

namespace detail {
template <class T, class V>
struct variant_index;
template <class T, class... Ts>
struct variant_index<T, std::variant<Ts...>> {
  static constexpr std::size_t value = [] {
    constexpr bool matches[] = {std::is_same_v<T, Ts>...};
    for (std::size_t i = 0; i < sizeof...(Ts); ++i)
      if (matches[i]) return i;
    return sizeof...(Ts);
  }();
};
}  // namespace detail

template <class T>
constexpr MessageType message_type_of() {
  constexpr auto idx = detail::variant_index<T, Message>::value;
  static_assert(idx < kMessageTypeCount, "not a bus message type");
  return static_cast<MessageType>(idx);
}

inline MessageType type_of(const Message& m) { return static_cast<MessageType>(m.index()); }

std::string_view to_string(MessageType t);
std::optional<MessageType> parse_message_type(std::string_view s);

std::vector<std::uint8_t> encode(const Message& m);
// Throws DecodeError on malformed or trailing bytes.
Message decode(MessageType type, std::span<const std::uint8_t> bytes);

std::uint64_t payload_hash(const Message& m);

// Flat-ish JSON rendering used by scenario predicates, the bridge and tslcat.
nlohmann::ordered_json to_json(const Message& m);

}  // namespace racestack
