#include "racestack/orchestration.hpp"

#include <algorithm>

namespace racestack::orch {

std::string_view to_string(OrchErrc c) {
  switch (c) {
    case OrchErrc::UnknownModule: return "UnknownModule";
    case OrchErrc::DuplicateModule: return "DuplicateModule";
    case OrchErrc::UnknownFlag: return "UnknownFlag";
    case OrchErrc::NotAtStandstill: return "NotAtStandstill";
    case OrchErrc::NotConfirmed: return "NotConfirmed";
  }
  return "?";
}

OrchError::OrchError(OrchErrc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

// --- watchdog ---------------------------------------------------------------

Watchdog::Watchdog(std::vector<WatchedModule> modules, SimTime status_timeout)
    : modules_(std::move(modules)), timeout_(status_timeout) {
  for (const auto& m : modules_) {
    if (!entries_.emplace(m.id, Entry{}).second) throw OrchError(OrchErrc::DuplicateModule, m.id);
  }
}

void Watchdog::ingest(const msg::ModuleStatus& status, SimTime received_at) {
  auto it = entries_.find(status.module_id);
  if (it == entries_.end()) throw OrchError(OrchErrc::UnknownModule, status.module_id);
  it->second.level = status.level;
  it->second.detail = status.detail;
  it->second.received = received_at;
}

msg::SoftwareStateReport Watchdog::cycle(SimTime now) {
  msg::SoftwareStateReport r;
  r.cycle = ++cycle_;
  r.stamp = now;
  for (const auto& m : modules_) {
    const auto& e = entries_.at(m.id);
    msg::ReportEntry out;
    if (!e.level) {
      out.level = DiagnosticLevel::Stale;
      out.detail = "unknown: no status received";
      out.known = false;
    } else if (now - e.received > timeout_) {
      out.level = DiagnosticLevel::Stale;
      out.detail = "status timeout (last " + std::string(to_string(*e.level)) + ")";
      out.known = true;
    } else {
      out.level = *e.level;
      out.detail = e.detail;
      out.known = true;
    }
    r.modules.emplace(m.id, std::move(out));
  }
  return r;
}

// --- rules ------------------------------------------------------------------

namespace {

bool failed(DiagnosticLevel l) { return l >= DiagnosticLevel::Error; }

void append(std::string& s, std::string_view part) {
  if (!s.empty()) s += "; ";
  s += part;
}

}  // namespace

SafetyActionKind classify(std::span<const ModuleLevel> modules, const msg::DrivingConditions& cond,
                          Behavior behavior, const RuleThresholds& th) {
  bool hard = !cond.localization_ok || cond.lateral_offset > th.lateral_offset_max;
  bool safe = !cond.basestation_link_ok || behavior == Behavior::Stop;
  for (const auto& m : modules) {
    if (!failed(m.level)) continue;
    if (m.critical)
      hard = true;
    else
      safe = true;
  }
  if (hard) return SafetyActionKind::HardEmergency;
  if (!cond.trajectory_valid || !cond.tracking_ok) return SafetyActionKind::EmergencyStop;
  if (safe) return SafetyActionKind::SafeStop;
  return SafetyActionKind::Nominal;
}

RuleResult evaluate_rules(std::span<const ModuleLevel> modules, const msg::DrivingConditions& cond,
                          Behavior behavior, const RuleThresholds& th) {
  RuleResult r;
  r.action = classify(modules, cond, behavior, th);
  std::string& why = r.reason;
  switch (r.action) {
    case SafetyActionKind::HardEmergency:
      for (const auto& m : modules) {
        if (m.critical && failed(m.level))
          append(why, "critical module " + std::string(m.id) + " " + std::string(to_string(m.level)));
      }
      if (!cond.localization_ok) append(why, "localization lost");
      if (cond.lateral_offset > th.lateral_offset_max) append(why, "lateral offset exceeds threshold");
      break;
    case SafetyActionKind::EmergencyStop:
      if (!cond.trajectory_valid) append(why, "no valid trajectory");
      if (!cond.tracking_ok) append(why, "trajectory tracking failed");
      break;
    case SafetyActionKind::SafeStop:
      for (const auto& m : modules) {
        if (!m.critical && failed(m.level))
          append(why, "module " + std::string(m.id) + " " + std::string(to_string(m.level)));
      }
      if (!cond.basestation_link_ok) append(why, "basestation link lost");
      if (behavior == Behavior::Stop) append(why, "stop requested");
      break;
    case SafetyActionKind::Nominal: break;
  }
  return r;
}

// --- state machine ----------------------------------------------------------

SafetyStateMachine::SafetyStateMachine(StateMachineConfig cfg) : cfg_(std::move(cfg)) {}

double SafetyStateMachine::target_speed(SafetyActionKind a, Behavior b) const {
  if (a != SafetyActionKind::Nominal) return 0.0;
  switch (b) {
    case Behavior::DriveFast: return cfg_.speeds.drive_fast;
    case Behavior::DriveSlow: return cfg_.speeds.drive_slow;
    case Behavior::Pit: return cfg_.speeds.pit;
    case Behavior::Stop:
    case Behavior::None: return 0.0;
  }
  return 0.0;
}

msg::SafetyAction SafetyStateMachine::resolve(const msg::SoftwareStateReport& report,
                                              const msg::DrivingConditions& cond, Behavior behavior) {
  if (!armed_) {
    for (const auto& [id, e] : report.modules) {
      if (!e.known || e.level != DiagnosticLevel::Ok) {
        return {SafetyActionKind::SafeStop,
                "startup: waiting for " + id + (e.known ? " (" + std::string(to_string(e.level)) + ")" : " (unknown)"),
                0.0};
      }
    }
    armed_ = true;
  }

  std::vector<ModuleLevel> levels;
  levels.reserve(report.modules.size());
  for (const auto& [id, e] : report.modules) levels.push_back({id, e.level, cfg_.critical.contains(id)});
  auto r = evaluate_rules(levels, cond, behavior, cfg_.thresholds);

  if (r.action == SafetyActionKind::HardEmergency && !hard_latched_) {
    hard_latched_ = true;
    hard_reason_ = r.reason;
  }
  if (hard_latched_) return {SafetyActionKind::HardEmergency, hard_reason_, 0.0};

  if (r.action == SafetyActionKind::EmergencyStop && !estop_latched_) {
    estop_latched_ = true;
    estop_reason_ = r.reason;
  }
  if (estop_latched_) {
    if (cond.speed < cfg_.standstill_speed && r.action != SafetyActionKind::EmergencyStop) {
      estop_latched_ = false;
    } else {
      return {SafetyActionKind::EmergencyStop, estop_reason_, 0.0};
    }
  }
  return {r.action, r.reason, target_speed(r.action, behavior)};
}

msg::SafetyAction SafetyStateMachine::step(const msg::SoftwareStateReport& report, const msg::DrivingConditions& cond,
                                           Behavior behavior) {
  auto now = resolve(report, cond, behavior);
  if (cfg_.mode == ResolutionMode::SingleCycle) return now;
  auto out = pending_.value_or(msg::SafetyAction{SafetyActionKind::SafeStop, "startup: first cycle", 0.0});
  pending_ = std::move(now);
  return out;
}

void SafetyStateMachine::reset_hard_emergency(double speed, bool confirmed) {
  if (!confirmed) throw OrchError(OrchErrc::NotConfirmed, "reset requires operator confirmation");
  if (!(speed < cfg_.standstill_speed))
    throw OrchError(OrchErrc::NotAtStandstill, "speed " + std::to_string(speed) + " m/s");
  hard_latched_ = false;
  hard_reason_.clear();
  estop_latched_ = false;
  pending_.reset();
}

// --- race control -----------------------------------------------------------

Behavior default_flag_behavior(RaceFlagCode flag) {
  switch (flag) {
    case RaceFlagCode::Green: return Behavior::DriveFast;
    case RaceFlagCode::Yellow: return Behavior::DriveSlow;
    case RaceFlagCode::Red: return Behavior::Stop;
    case RaceFlagCode::Checkered: return Behavior::DriveSlow;
    case RaceFlagCode::PitOrder: return Behavior::Pit;
  }
  return Behavior::Stop;
}

std::optional<Behavior> RaceControl::default_mapping(std::int32_t code) {
  if (code < 0 || code > static_cast<std::int32_t>(RaceFlagCode::PitOrder)) return std::nullopt;
  return default_flag_behavior(static_cast<RaceFlagCode>(code));
}

msg::BehaviorRequest RaceControl::translate(std::int32_t code) {
  auto b = mapping_(code);
  if (!b) throw OrchError(OrchErrc::UnknownFlag, "flag code " + std::to_string(code));
  current_ = {*b, BehaviorSource::RaceControl};
  return current_;
}

msg::BehaviorRequest arbitrate_behavior(const msg::BehaviorRequest& team, const msg::BehaviorRequest& race_control) {
  return race_control.request > team.request ? race_control : team;
}

// --- rule grid ----------------------------------------------------------------

std::size_t RuleGrid::size() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < module_count(); ++i) n *= 4;
  return n * (std::size_t{1} << kConditionBits) * kBehaviors;
}

namespace {

msg::DrivingConditions conditions_from_bits(unsigned bits, const RuleThresholds& th) {
  msg::DrivingConditions c;
  c.trajectory_valid = bits & 1u;
  c.tracking_ok = bits & 2u;
  c.localization_ok = bits & 4u;
  c.basestation_link_ok = bits & 8u;
  c.lateral_offset = (bits & 16u) ? 0.0 : th.lateral_offset_max + 1.0;
  return c;
}

}  // namespace

RuleGrid::Case RuleGrid::case_at(std::size_t index) const {
  Case c;
  for (std::size_t i = 0; i < module_count(); ++i) {
    c.levels.push_back(static_cast<DiagnosticLevel>(index % 4));
    index /= 4;
  }
  c.cond = conditions_from_bits(static_cast<unsigned>(index % (1u << kConditionBits)), thresholds);
  index >>= kConditionBits;
  c.behavior = static_cast<Behavior>(index % kBehaviors);
  return c;
}

SafetyActionKind RuleGrid::evaluate(std::size_t index) const {
  constexpr std::size_t kMax = 16;
  std::array<ModuleLevel, kMax> levels{};
  const std::size_t n = std::min(module_count(), kMax);
  for (std::size_t i = 0; i < n; ++i) {
    levels[i] = {{}, static_cast<DiagnosticLevel>(index % 4), critical[i]};
    index /= 4;
  }
  const auto cond = conditions_from_bits(static_cast<unsigned>(index % (1u << kConditionBits)), thresholds);
  index >>= kConditionBits;
  return classify(std::span<const ModuleLevel>(levels.data(), n), cond, static_cast<Behavior>(index % kBehaviors),
                  thresholds);
}

std::vector<SafetyActionKind> evaluate_grid_serial(const RuleGrid& grid) {
  std::vector<SafetyActionKind> out(grid.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = grid.evaluate(i);
  return out;
}

std::vector<SafetyActionKind> evaluate_grid_parallel(const RuleGrid& grid) {
  const auto n = static_cast<std::int64_t>(grid.size());
  std::vector<SafetyActionKind> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = grid.evaluate(static_cast<std::size_t>(i));
  return out;
}

// --- nodes ------------------------------------------------------------------

namespace {

template <class T>
void declare_once(params::ParameterStore& store, const std::string& name, T value, bool read_only,
                  std::string description) {
  store.declare_if_absent({name, params::ParameterValue{std::move(value)}, read_only, std::move(description)});
}

SimTime ms_param(const params::ParameterStore& store, std::string_view name) {
  return std::chrono::milliseconds(store.get_int(name));
}

}  // namespace

void declare_parameters(params::ParameterStore& store) {
  declare_once(store, "watchdog.cycle_ms", std::int64_t{20}, true, "report assembly period");
  declare_once(store, "watchdog.status_timeout_ms", std::int64_t{100}, false, "silence before a module is STALE");
  declare_once(store, "sm.cycle_ms", std::int64_t{20}, true, "state machine period");
  declare_once(store, "sm.lateral_offset_max_m", 2.0, false, "lateral offset triggering HardEmergency");
  declare_once(store, "sm.speed_fast_mps", 50.0, false, "target speed for drive_fast");
  declare_once(store, "sm.speed_slow_mps", 20.0, false, "target speed for drive_slow");
  declare_once(store, "sm.speed_pit_mps", 12.0, false, "target speed for pit");
  declare_once(store, "sm.standstill_mps", 0.1, false, "standstill threshold for latch release");
  declare_once(store, "sm.conditions_timeout_ms", std::int64_t{100}, false, "driving conditions freshness");
  declare_once(store, "sm.resolution", std::string("single_cycle"), false, "single_cycle or two_phase");
}

WatchdogNode::WatchdogNode(bus::Bus& bus, params::ParameterStore& store, std::vector<WatchedModule> modules,
                           const Topics& topics)
    : bus_(&bus), store_(&store), wd_(std::move(modules)) {
  declare_parameters(store);
  wd_.set_status_timeout(ms_param(store, "watchdog.status_timeout_ms"));
  report_pub_ = bus.advertise(bus.topic(topics.report), "watchdog");
  bus.subscribe(
      bus.topic(topics.status),
      [this](const bus::Envelope& env) {
        const auto* st = env.get<msg::ModuleStatus>();
        if (!st) return;
        try {
          wd_.ingest(*st, bus_->now());
        } catch (const OrchError&) {
          ++unknown_;
        }
      },
      "watchdog");
  bus.schedule_timer(
      ms_param(store, "watchdog.cycle_ms"),
      [this](SimTime now) {
        wd_.set_status_timeout(ms_param(*store_, "watchdog.status_timeout_ms"));
        bus_->publish(report_pub_, wd_.cycle(now));
      },
      "watchdog");
}

SafetyNode::SafetyNode(bus::Bus& bus, params::ParameterStore& store, std::set<std::string, std::less<>> critical,
                       const Topics& topics)
    : bus_(&bus), store_(&store) {
  declare_parameters(store);
  sm_.config().critical = std::move(critical);
  sync_parameters();
  const std::string owner = "state_machine";
  action_pub_ = bus.advertise(bus.topic(topics.action), owner);
  emergency_pub_ = bus.advertise(bus.topic(topics.emergency), owner);
  bus.subscribe(
      bus.topic(topics.report),
      [this](const bus::Envelope& env) {
        if (auto r = env.get<msg::SoftwareStateReport>()) report_ = *r;
      },
      owner);
  bus.subscribe(
      bus.topic(topics.conditions),
      [this](const bus::Envelope& env) {
        if (auto c = env.get<msg::DrivingConditions>()) {
          cond_ = *c;
          conditions_rx_ = bus_->now();
        }
      },
      owner);
  bus.subscribe(
      bus.topic(topics.team_behavior),
      [this](const bus::Envelope& env) {
        if (auto b = env.get<msg::BehaviorRequest>()) team_ = {b->request, BehaviorSource::Team};
      },
      owner);
  bus.subscribe(
      bus.topic(topics.race_control_behavior),
      [this](const bus::Envelope& env) {
        if (auto b = env.get<msg::BehaviorRequest>()) rc_ = {b->request, BehaviorSource::RaceControl};
      },
      owner);
  if (auto h = bus.find_topic(topics.operator_command)) {
    bus.subscribe(
        *h,
        [this](const bus::Envelope& env) {
          auto c = env.get<msg::OperatorCommand>();
          if (!c || c->kind != msg::OperatorCommand::Kind::ResetHardEmergency) return;
          try {
            sm_.reset_hard_emergency(cond_.speed, c->confirmed);
          } catch (const OrchError&) {
            ++rejected_resets_;
          }
        },
        owner);
  }
  bus.schedule_timer(ms_param(store, "sm.cycle_ms"), [this](SimTime now) { cycle(now); }, owner);
}

Behavior SafetyNode::arbitrated_behavior() const { return arbitrate_behavior(team_, rc_).request; }

void SafetyNode::sync_parameters() {
  auto& c = sm_.config();
  c.thresholds.lateral_offset_max = store_->get_double("sm.lateral_offset_max_m");
  c.speeds.drive_fast = store_->get_double("sm.speed_fast_mps");
  c.speeds.drive_slow = store_->get_double("sm.speed_slow_mps");
  c.speeds.pit = store_->get_double("sm.speed_pit_mps");
  c.standstill_speed = store_->get_double("sm.standstill_mps");
  c.mode = store_->get_text("sm.resolution") == "two_phase" ? ResolutionMode::TwoPhase : ResolutionMode::SingleCycle;
}

void SafetyNode::cycle(SimTime now) {
  sync_parameters();
  if (!report_) {
    last_ = {SafetyActionKind::SafeStop, "startup: no software state report", 0.0};
  } else {
    msg::DrivingConditions cond = cond_;
    if (!conditions_rx_ || now - *conditions_rx_ > ms_param(*store_, "sm.conditions_timeout_ms")) {
      // Without fresh conditions nothing about the vehicle can be assumed.
      cond.trajectory_valid = cond.tracking_ok = cond.localization_ok = cond.basestation_link_ok = false;
    }
    if (!sm_.armed() && !conditions_rx_) {
      last_ = {SafetyActionKind::SafeStop, "startup: no driving conditions", 0.0};
    } else {
      last_ = sm_.step(*report_, cond, arbitrated_behavior());
    }
  }
  bus_->publish(action_pub_, last_);
  if (last_.action == SafetyActionKind::HardEmergency) {
    bus_->publish(emergency_pub_, msg::EmergencyInstruction{last_.reason});
  }
}

RaceControlNode::RaceControlNode(bus::Bus& bus, const Topics& topics, RaceControl rc) : rc_(std::move(rc)) {
  pub_ = bus.advertise(bus.topic(topics.race_control_behavior), "race_control");
  bus.subscribe(
      bus.topic(topics.race_flag),
      [this, &bus](const bus::Envelope& env) {
        auto f = env.get<msg::RaceFlag>();
        if (!f) return;
        try {
          bus.publish(pub_, rc_.translate(f->code));
        } catch (const OrchError&) {
          ++rejected_;
        }
      },
      "race_control");
}

}  // namespace racestack::orch
