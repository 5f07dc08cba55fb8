#include "racestack/messages.hpp"

#include <array>
#include <cmath>

#include "racestack/bytes.hpp"

namespace racestack {

namespace {

constexpr std::array<std::string_view, 4> kLevelNames = {"OK", "WARN", "ERROR", "STALE"};
constexpr std::array<std::string_view, 4> kActionNames = {"Nominal", "SafeStop", "EmergencyStop",
                                                          "HardEmergency"};
constexpr std::array<std::string_view, 5> kBehaviorNames = {"none", "drive_fast", "drive_slow",
                                                            "pit", "stop"};
constexpr std::array<std::string_view, 5> kFlagNames = {"green", "yellow", "red", "checkered",
                                                        "pit_order"};
constexpr std::array<std::string_view, 4> kGateModeNames = {
    "Autonomous", "ManualDriving", "ManualOverrideLongitudinal", "HardEmergency"};
constexpr std::array<std::string_view, kMessageTypeCount> kTypeNames = {
    "Sample",          "ImuSample",         "Odometry",        "VehicleState",
    "TrajectorySet",   "ActuationCommand",  "ModuleStatus",    "SoftwareStateReport",
    "SafetyAction",    "BehaviorRequest",   "RaceFlag",        "OperatorInput",
    "OperatorCommand", "DrivingConditions", "EmergencyInstruction", "GateState",
    "SignalSchema",    "SignalFrame"};

template <class E, std::size_t N>
std::optional<E> lookup(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == s) return static_cast<E>(i);
  return std::nullopt;
}

template <std::size_t N, class E>
std::string_view name_of(const std::array<std::string_view, N>& names, E e) {
  auto i = static_cast<std::size_t>(e);
  return i < N ? names[i] : std::string_view{"?"};
}

// --- binary codec -----------------------------------------------------------

void put(ByteWriter& w, SimTime t) { w.i64(t.count()); }
void get(ByteReader& r, SimTime& t) { t = SimTime{r.i64()}; }

template <class E>
void put_enum(ByteWriter& w, E e) {
  w.u8(static_cast<std::uint8_t>(e));
}
template <class E>
E get_enum(ByteReader& r, std::uint8_t count) {
  auto v = r.u8();
  if (v >= count) throw DecodeError("enum value out of range");
  return static_cast<E>(v);
}

void put(ByteWriter& w, const msg::Sample& m) { w.f64(m.value); }
void get(ByteReader& r, msg::Sample& m) { m.value = r.f64(); }

void put(ByteWriter& w, const msg::ImuSample& m) {
  w.f64(m.s);
  w.f64(m.lateral_offset);
  w.f64(m.speed);
  w.f64(m.accel);
}
void get(ByteReader& r, msg::ImuSample& m) {
  m.s = r.f64();
  m.lateral_offset = r.f64();
  m.speed = r.f64();
  m.accel = r.f64();
}

void put(ByteWriter& w, const msg::Odometry& m) {
  w.f64(m.s);
  w.f64(m.lateral_offset);
  w.f64(m.speed);
  w.boolean(m.valid);
}
void get(ByteReader& r, msg::Odometry& m) {
  m.s = r.f64();
  m.lateral_offset = r.f64();
  m.speed = r.f64();
  m.valid = r.boolean();
}

void put(ByteWriter& w, const msg::VehicleState& m) {
  w.f64(m.position_s);
  w.f64(m.lateral_offset);
  w.f64(m.speed);
  w.f64(m.brake_pressure_applied);
  w.f64(m.throttle_applied);
}
void get(ByteReader& r, msg::VehicleState& m) {
  m.position_s = r.f64();
  m.lateral_offset = r.f64();
  m.speed = r.f64();
  m.brake_pressure_applied = r.f64();
  m.throttle_applied = r.f64();
}

void put(ByteWriter& w, const msg::Trajectory& t) {
  put_enum(w, t.kind);
  put(w, t.stamp);
  w.u64(t.id);
  w.u32(static_cast<std::uint32_t>(t.points.size()));
  for (const auto& p : t.points) {
    w.f64(p.s);
    w.f64(p.speed_target);
  }
}
void get(ByteReader& r, msg::Trajectory& t) {
  t.kind = get_enum<msg::TrajectoryKind>(r, 2);
  get(r, t.stamp);
  t.id = r.u64();
  auto n = r.u32();
  if (n > r.remaining() / 16) throw DecodeError("trajectory point count exceeds payload");
  t.points.resize(n);
  for (auto& p : t.points) {
    p.s = r.f64();
    p.speed_target = r.f64();
  }
}

void put(ByteWriter& w, const msg::TrajectorySet& m) {
  put(w, m.performance);
  put(w, m.emergency);
}
void get(ByteReader& r, msg::TrajectorySet& m) {
  get(r, m.performance);
  get(r, m.emergency);
}

void put(ByteWriter& w, const msg::ActuationCommand& m) {
  w.f64(m.throttle);
  w.f64(m.brake_pressure);
  w.f64(m.steering_angle);
  put(w, m.stamp);
  w.u64(m.sequence);
}
void get(ByteReader& r, msg::ActuationCommand& m) {
  m.throttle = r.f64();
  m.brake_pressure = r.f64();
  m.steering_angle = r.f64();
  get(r, m.stamp);
  m.sequence = r.u64();
}

void put(ByteWriter& w, const msg::ModuleStatus& m) {
  w.str16(m.module_id);
  put_enum(w, m.level);
  w.str16(m.detail);
  put(w, m.stamp);
}
void get(ByteReader& r, msg::ModuleStatus& m) {
  m.module_id = r.str16();
  m.level = get_enum<DiagnosticLevel>(r, 4);
  m.detail = r.str16();
  get(r, m.stamp);
}

void put(ByteWriter& w, const msg::SoftwareStateReport& m) {
  w.u64(m.cycle);
  put(w, m.stamp);
  w.u32(static_cast<std::uint32_t>(m.modules.size()));
  for (const auto& [id, e] : m.modules) {
    w.str16(id);
    put_enum(w, e.level);
    w.str16(e.detail);
    w.boolean(e.known);
  }
}
void get(ByteReader& r, msg::SoftwareStateReport& m) {
  m.cycle = r.u64();
  get(r, m.stamp);
  auto n = r.u32();
  m.modules.clear();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto id = r.str16();
    msg::ReportEntry e;
    e.level = get_enum<DiagnosticLevel>(r, 4);
    e.detail = r.str16();
    e.known = r.boolean();
    m.modules.emplace(std::move(id), std::move(e));
  }
}

void put(ByteWriter& w, const msg::SafetyAction& m) {
  put_enum(w, m.action);
  w.str16(m.reason);
  w.f64(m.target_speed);
}
void get(ByteReader& r, msg::SafetyAction& m) {
  m.action = get_enum<SafetyActionKind>(r, 4);
  m.reason = r.str16();
  m.target_speed = r.f64();
}

void put(ByteWriter& w, const msg::BehaviorRequest& m) {
  put_enum(w, m.request);
  put_enum(w, m.source);
}
void get(ByteReader& r, msg::BehaviorRequest& m) {
  m.request = get_enum<Behavior>(r, 5);
  m.source = get_enum<BehaviorSource>(r, 2);
}

void put(ByteWriter& w, const msg::RaceFlag& m) { w.u32(static_cast<std::uint32_t>(m.code)); }
void get(ByteReader& r, msg::RaceFlag& m) { m.code = static_cast<std::int32_t>(r.u32()); }

void put(ByteWriter& w, const msg::OperatorInput& m) {
  w.f64(m.throttle);
  w.f64(m.brake);
  w.f64(m.steering);
  w.boolean(m.override_active);
  put(w, m.stamp);
}
void get(ByteReader& r, msg::OperatorInput& m) {
  m.throttle = r.f64();
  m.brake = r.f64();
  m.steering = r.f64();
  m.override_active = r.boolean();
  get(r, m.stamp);
}

void put(ByteWriter& w, const msg::OperatorCommand& m) {
  put_enum(w, m.kind);
  w.boolean(m.enable);
  w.boolean(m.confirmed);
}
void get(ByteReader& r, msg::OperatorCommand& m) {
  m.kind = get_enum<msg::OperatorCommand::Kind>(r, 2);
  m.enable = r.boolean();
  m.confirmed = r.boolean();
}

void put(ByteWriter& w, const msg::DrivingConditions& m) {
  w.boolean(m.trajectory_valid);
  w.boolean(m.tracking_ok);
  w.f64(m.lateral_offset);
  w.boolean(m.localization_ok);
  w.boolean(m.basestation_link_ok);
  w.f64(m.speed);
}
void get(ByteReader& r, msg::DrivingConditions& m) {
  m.trajectory_valid = r.boolean();
  m.tracking_ok = r.boolean();
  m.lateral_offset = r.f64();
  m.localization_ok = r.boolean();
  m.basestation_link_ok = r.boolean();
  m.speed = r.f64();
}

void put(ByteWriter& w, const msg::EmergencyInstruction& m) { w.str16(m.reason); }
void get(ByteReader& r, msg::EmergencyInstruction& m) { m.reason = r.str16(); }

void put(ByteWriter& w, const msg::GateState& m) {
  put_enum(w, m.mode);
  w.str16(m.reason);
}
void get(ByteReader& r, msg::GateState& m) {
  m.mode = get_enum<GateMode>(r, 4);
  m.reason = r.str16();
}

void put(ByteWriter& w, const msg::SignalSchemaMsg& m) {
  w.u64(m.schema_id);
  w.u16(static_cast<std::uint16_t>(m.names.size()));
  for (const auto& n : m.names) w.str16(n);
  w.str16(m.source_module);
}
void get(ByteReader& r, msg::SignalSchemaMsg& m) {
  m.schema_id = r.u64();
  auto n = r.u16();
  m.names.clear();
  for (std::uint16_t i = 0; i < n; ++i) m.names.push_back(r.str16());
  m.source_module = r.str16();
}

void put(ByteWriter& w, const msg::SignalFrameMsg& m) {
  w.u64(m.schema_id);
  put(w, m.stamp);
  w.boolean(m.flagged);
  w.u32(static_cast<std::uint32_t>(m.values.size()));
  for (double v : m.values) w.f64(v);
}
void get(ByteReader& r, msg::SignalFrameMsg& m) {
  m.schema_id = r.u64();
  get(r, m.stamp);
  m.flagged = r.boolean();
  auto n = r.u32();
  if (n > r.remaining() / 8) throw DecodeError("frame value count exceeds payload");
  m.values.resize(n);
  for (auto& v : m.values) v = r.f64();
}

template <std::size_t I = 0>
Message decode_index(std::size_t index, ByteReader& r) {
  if constexpr (I < kMessageTypeCount) {
    if (index == I) {
      std::variant_alternative_t<I, Message> m;
      get(r, m);
      return m;
    }
    return decode_index<I + 1>(index, r);
  } else {
    throw DecodeError("unknown message type tag");
  }
}

// --- JSON ------------------------------------------------------------------

using ojson = nlohmann::ordered_json;

ojson trajectory_json(const msg::Trajectory& t) {
  ojson pts = ojson::array();
  for (const auto& p : t.points) pts.push_back({p.s, p.speed_target});
  return {{"kind", t.kind == msg::TrajectoryKind::Performance ? "Performance" : "Emergency"},
          {"id", t.id},
          {"stamp_ns", t.stamp.count()},
          {"points", std::move(pts)}};
}

struct JsonVisitor {
  ojson operator()(const msg::Sample& m) const { return {{"value", m.value}}; }
  ojson operator()(const msg::ImuSample& m) const {
    return {{"s", m.s}, {"lateral_offset", m.lateral_offset}, {"speed", m.speed}, {"accel", m.accel}};
  }
  ojson operator()(const msg::Odometry& m) const {
    return {{"s", m.s}, {"lateral_offset", m.lateral_offset}, {"speed", m.speed}, {"valid", m.valid}};
  }
  ojson operator()(const msg::VehicleState& m) const {
    return {{"position_s", m.position_s},
            {"lateral_offset", m.lateral_offset},
            {"speed", m.speed},
            {"brake_pressure_applied", m.brake_pressure_applied},
            {"throttle_applied", m.throttle_applied}};
  }
  ojson operator()(const msg::TrajectorySet& m) const {
    return {{"performance", trajectory_json(m.performance)},
            {"emergency", trajectory_json(m.emergency)}};
  }
  ojson operator()(const msg::ActuationCommand& m) const {
    return {{"throttle", m.throttle},
            {"brake_pressure", m.brake_pressure},
            {"steering_angle", m.steering_angle},
            {"stamp_ns", m.stamp.count()},
            {"sequence", m.sequence}};
  }
  ojson operator()(const msg::ModuleStatus& m) const {
    return {{"module_id", m.module_id},
            {"level", to_string(m.level)},
            {"detail", m.detail},
            {"stamp_ns", m.stamp.count()}};
  }
  ojson operator()(const msg::SoftwareStateReport& m) const {
    ojson states = ojson::object();
    ojson details = ojson::object();
    ojson known = ojson::object();
    for (const auto& [id, e] : m.modules) {
      states[id] = to_string(e.level);
      details[id] = e.detail;
      known[id] = e.known;
    }
    return {{"cycle", m.cycle},
            {"stamp_ns", m.stamp.count()},
            {"states", std::move(states)},
            {"details", std::move(details)},
            {"known", std::move(known)}};
  }
  ojson operator()(const msg::SafetyAction& m) const {
    return {{"action", to_string(m.action)}, {"reason", m.reason}, {"target_speed", m.target_speed}};
  }
  ojson operator()(const msg::BehaviorRequest& m) const {
    return {{"request", to_string(m.request)},
            {"source", m.source == BehaviorSource::Team ? "team" : "race_control"}};
  }
  ojson operator()(const msg::RaceFlag& m) const { return {{"code", m.code}}; }
  ojson operator()(const msg::OperatorInput& m) const {
    return {{"throttle", m.throttle},
            {"brake", m.brake},
            {"steering", m.steering},
            {"override_active", m.override_active},
            {"stamp_ns", m.stamp.count()}};
  }
  ojson operator()(const msg::OperatorCommand& m) const {
    return {{"kind", m.kind == msg::OperatorCommand::Kind::ResetHardEmergency ? "reset" : "manual_mode"},
            {"enable", m.enable},
            {"confirmed", m.confirmed}};
  }
  ojson operator()(const msg::DrivingConditions& m) const {
    return {{"trajectory_valid", m.trajectory_valid},
            {"tracking_ok", m.tracking_ok},
            {"lateral_offset", m.lateral_offset},
            {"localization_ok", m.localization_ok},
            {"basestation_link_ok", m.basestation_link_ok},
            {"speed", m.speed}};
  }
  ojson operator()(const msg::EmergencyInstruction& m) const { return {{"reason", m.reason}}; }
  ojson operator()(const msg::GateState& m) const {
    return {{"mode", to_string(m.mode)}, {"reason", m.reason}};
  }
  ojson operator()(const msg::SignalSchemaMsg& m) const {
    return {{"schema_id", m.schema_id}, {"names", m.names}, {"source_module", m.source_module}};
  }
  ojson operator()(const msg::SignalFrameMsg& m) const {
    ojson values = ojson::array();
    for (double v : m.values) {
      if (std::isfinite(v))
        values.push_back(v);
      else
        values.push_back(nullptr);
    }
    return {{"schema_id", m.schema_id},
            {"stamp_ns", m.stamp.count()},
            {"values", std::move(values)},
            {"flagged", m.flagged}};
  }
};

}  // namespace

std::string_view to_string(DiagnosticLevel level) { return name_of(kLevelNames, level); }
std::optional<DiagnosticLevel> parse_level(std::string_view s) {
  return lookup<DiagnosticLevel>(kLevelNames, s);
}
std::string_view to_string(SafetyActionKind a) { return name_of(kActionNames, a); }
std::optional<SafetyActionKind> parse_action(std::string_view s) {
  return lookup<SafetyActionKind>(kActionNames, s);
}
std::string_view to_string(Behavior b) { return name_of(kBehaviorNames, b); }
std::optional<Behavior> parse_behavior(std::string_view s) { return lookup<Behavior>(kBehaviorNames, s); }
std::optional<RaceFlagCode> parse_flag(std::string_view s) { return lookup<RaceFlagCode>(kFlagNames, s); }
std::string_view to_string(GateMode m) { return name_of(kGateModeNames, m); }
std::string_view to_string(MessageType t) { return name_of(kTypeNames, t); }
std::optional<MessageType> parse_message_type(std::string_view s) {
  return lookup<MessageType>(kTypeNames, s);
}

std::vector<std::uint8_t> encode(const Message& m) {
  ByteWriter w;
  std::visit([&](const auto& v) { put(w, v); }, m);
  return w.take();
}

Message decode(MessageType type, std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto m = decode_index(static_cast<std::size_t>(type), r);
  if (!r.at_end()) throw DecodeError("trailing bytes after message payload");
  return m;
}

std::uint64_t payload_hash(const Message& m) {
  auto bytes = encode(m);
  return fnv1a64(std::span<const std::uint8_t>(bytes));
}

nlohmann::ordered_json to_json(const Message& m) { return std::visit(JsonVisitor{}, m); }

}  // namespace racestack
