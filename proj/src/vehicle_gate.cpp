#include "racestack/vehicle_gate.hpp"

#include <algorithm>
#include <cmath>

namespace racestack::gate {

std::string_view to_string(GateErrc c) {
  switch (c) {
    case GateErrc::NotAtStandstill: return "NotAtStandstill";
    case GateErrc::NotConfirmed: return "NotConfirmed";
  }
  return "?";
}

GateError::GateError(GateErrc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

bool well_formed(const msg::ActuationCommand& c) {
  return std::isfinite(c.throttle) && std::isfinite(c.brake_pressure) && std::isfinite(c.steering_angle) &&
         c.throttle >= 0.0 && c.throttle <= 1.0 && c.brake_pressure >= 0.0;
}

bool well_formed(const msg::OperatorInput& o) {
  return std::isfinite(o.throttle) && std::isfinite(o.brake) && std::isfinite(o.steering);
}

namespace {

msg::ActuationCommand emergency_command(const GateParams& p) {
  msg::ActuationCommand c;
  c.brake_pressure = std::min(p.brake_pressure_bar, p.max_brake_bar);
  return c;
}

double unit(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

GateOutput gate_step(const GateStepInput& in, const GateParams& p) {
  GateOutput out;
  if (in.hard_emergency || (in.autonomy_timed_out && !in.manual_mode)) {
    out.mode = GateMode::HardEmergency;
    out.command = emergency_command(p);
    out.reason = in.hard_emergency ? "hard emergency latched" : "actuation command timeout";
  } else if (in.operator_input && in.operator_input->override_active) {
    out.mode = GateMode::ManualOverrideLongitudinal;
    out.command.brake_pressure = unit(in.operator_input->brake) * p.max_manual_brake_bar;
    // Only the longitudinal channels are overridden; steering stays with whoever drives.
    if (in.manual_mode)
      out.command.steering_angle = std::clamp(in.operator_input->steering, -1.0, 1.0) * p.max_steering_rad;
    else if (in.autonomy)
      out.command.steering_angle = in.autonomy->steering_angle;
    out.reason = "operator override";
  } else if (in.manual_mode) {
    out.mode = GateMode::ManualDriving;
    if (in.operator_input) {
      out.command.throttle = unit(in.operator_input->throttle);
      out.command.brake_pressure = unit(in.operator_input->brake) * p.max_manual_brake_bar;
      out.command.steering_angle = std::clamp(in.operator_input->steering, -1.0, 1.0) * p.max_steering_rad;
      out.reason = "manual driving";
    } else {
      out.command = emergency_command(p);
      out.reason = "manual driving without fresh operator input";
    }
  } else {
    out.mode = GateMode::Autonomous;
    if (in.autonomy) {
      out.command = *in.autonomy;
      out.reason = "autonomy";
    } else {
      out.reason = "awaiting first actuation command";
    }
  }
  auto& c = out.command;
  c.brake_pressure = std::clamp(c.brake_pressure, 0.0, p.max_brake_bar);
  c.throttle = unit(c.throttle);
  if (c.brake_pressure > 0.0) c.throttle = 0.0;
  c.stamp = in.now;
  return out;
}

VehicleGate::VehicleGate(GateParams p, SimTime start) : p_(p), reference_(start) {}

bool VehicleGate::on_autonomy(const msg::ActuationCommand& cmd, SimTime rx) {
  if (!well_formed(cmd)) return false;
  autonomy_ = cmd;
  autonomy_rx_ = rx;
  return true;
}

bool VehicleGate::on_operator(const msg::OperatorInput& in, SimTime rx) {
  if (!well_formed(in)) return false;
  operator_ = in;
  operator_rx_ = rx;
  return true;
}

void VehicleGate::request_hard_emergency(std::string reason) {
  if (hard_) return;
  hard_ = true;
  hard_reason_ = std::move(reason);
}

void VehicleGate::reset_at_standstill(double speed, bool confirmed, SimTime now) {
  if (!hard_) return;
  if (!confirmed) throw GateError(GateErrc::NotConfirmed, "reset requires operator confirmation");
  if (!(speed < p_.standstill_mps)) throw GateError(GateErrc::NotAtStandstill, "speed " + std::to_string(speed) + " m/s");
  hard_ = false;
  hard_reason_.clear();
  reference_ = now;
  autonomy_.reset();
  autonomy_rx_.reset();
}

void VehicleGate::set_manual_mode(bool enable, double speed, SimTime now) {
  if (enable) {
    if (p_.manual_entry_requires_standstill && !(speed < p_.standstill_mps))
      throw GateError(GateErrc::NotAtStandstill, "manual mode entry at " + std::to_string(speed) + " m/s");
    manual_ = true;
  } else if (manual_) {
    manual_ = false;
    reference_ = now;
  }
}

GateOutput VehicleGate::step(SimTime now) {
  GateStepInput in;
  in.now = now;
  in.autonomy = autonomy_;
  const SimTime since = autonomy_rx_ ? std::max(*autonomy_rx_, reference_) : reference_;
  in.autonomy_timed_out = now - since > p_.actuation_timeout;
  if (operator_ && operator_rx_ && now - *operator_rx_ <= p_.operator_timeout) in.operator_input = operator_;
  in.manual_mode = manual_;
  if (in.autonomy_timed_out && !manual_) request_hard_emergency("actuation command timeout");
  in.hard_emergency = hard_;
  auto out = gate_step(in, p_);
  if (hard_) out.reason = hard_reason_;
  out.command.sequence = ++sequence_;
  return out;
}

// --- node -------------------------------------------------------------------

namespace {

template <class T>
void declare_once(params::ParameterStore& store, const std::string& name, T value, bool read_only,
                  std::string description) {
  store.declare_if_absent({name, params::ParameterValue{std::move(value)}, read_only, std::move(description)});
}

}  // namespace

void declare_parameters(params::ParameterStore& store) {
  declare_once(store, "gate.brake_pressure_bar", 40.0, false, "predefined hard-emergency brake pressure");
  declare_once(store, "gate.max_manual_brake_bar", 80.0, false, "pressure at full operator brake");
  declare_once(store, "gate.max_brake_bar", 100.0, false, "output brake pressure limit");
  declare_once(store, "gate.max_steering_rad", 0.3, false, "steering at full operator deflection");
  declare_once(store, "gate.standstill_mps", 0.1, false, "standstill threshold");
  declare_once(store, "gate.actuation_timeout_ms", std::int64_t{50}, false, "autonomy command timeout");
  declare_once(store, "gate.operator_timeout_ms", std::int64_t{250}, false, "operator input freshness");
  declare_once(store, "gate.manual_entry_requires_standstill", true, false, "restrict manual mode entry");
  declare_once(store, "gate.cycle_ms", std::int64_t{10}, true, "gate period");
  declare_once(store, "gate.heartbeat_ms", std::int64_t{20}, true, "status period");
}

GateParams params_from(const params::ParameterStore& store) {
  GateParams p;
  p.brake_pressure_bar = store.get_double("gate.brake_pressure_bar");
  p.max_manual_brake_bar = store.get_double("gate.max_manual_brake_bar");
  p.max_brake_bar = store.get_double("gate.max_brake_bar");
  p.max_steering_rad = store.get_double("gate.max_steering_rad");
  p.standstill_mps = store.get_double("gate.standstill_mps");
  p.actuation_timeout = std::chrono::milliseconds(store.get_int("gate.actuation_timeout_ms"));
  p.operator_timeout = std::chrono::milliseconds(store.get_int("gate.operator_timeout_ms"));
  p.manual_entry_requires_standstill = store.get_bool("gate.manual_entry_requires_standstill");
  return p;
}

GateNode::GateNode(bus::Bus& bus, params::ParameterStore& store, const GateTopics& topics, std::string module_id)
    : bus_(&bus),
      store_(&store),
      gate_((declare_parameters(store), params_from(store)), bus.now()),
      status_(bus, module_id, topics.status) {
  out_pub_ = bus.advertise(bus.topic(topics.output), module_id);
  state_pub_ = bus.advertise(bus.topic(topics.state), module_id);
  bus.subscribe(
      bus.topic(topics.autonomy),
      [this](const bus::Envelope& env) {
        if (auto c = env.get<msg::ActuationCommand>()) gate_.on_autonomy(*c, bus_->now());
      },
      module_id);
  bus.subscribe(
      bus.topic(topics.emergency),
      [this](const bus::Envelope& env) {
        auto e = env.get<msg::EmergencyInstruction>();
        gate_.request_hard_emergency(e && !e->reason.empty() ? e->reason : "state machine instruction");
      },
      module_id);
  if (auto h = bus.find_topic(topics.operator_input)) {
    bus.subscribe(
        *h,
        [this](const bus::Envelope& env) {
          if (auto o = env.get<msg::OperatorInput>()) gate_.on_operator(*o, bus_->now());
        },
        module_id);
  }
  if (auto h = bus.find_topic(topics.operator_command)) {
    bus.subscribe(
        *h,
        [this](const bus::Envelope& env) {
          auto c = env.get<msg::OperatorCommand>();
          if (!c) return;
          try {
            if (c->kind == msg::OperatorCommand::Kind::ResetHardEmergency)
              gate_.reset_at_standstill(speed_, c->confirmed, bus_->now());
            else
              gate_.set_manual_mode(c->enable, speed_, bus_->now());
          } catch (const GateError&) {
            ++rejected_;
          }
        },
        module_id);
  }
  if (auto h = bus.find_topic(topics.vehicle_state)) {
    bus.subscribe(
        *h,
        [this](const bus::Envelope& env) {
          if (auto s = env.get<msg::VehicleState>()) speed_ = s->speed;
        },
        module_id);
  }
  bus.schedule_timer(std::chrono::milliseconds(store.get_int("gate.cycle_ms")), [this](SimTime now) { cycle(now); },
                     module_id);
  bus.schedule_timer(
      std::chrono::milliseconds(store.get_int("gate.heartbeat_ms")),
      [this](SimTime) {
        if (last_.mode == GateMode::HardEmergency && !gate_.hard_reason().empty() &&
            gate_.hard_reason() == "actuation command timeout")
          status_.publish(DiagnosticLevel::Warn, "actuation command timeout");
        else
          status_.publish(DiagnosticLevel::Ok);
      },
      module_id);
}

void GateNode::cycle(SimTime now) {
  gate_.params() = params_from(*store_);
  last_ = gate_.step(now);
  bus_->publish(out_pub_, last_.command);
  bus_->publish(state_pub_, msg::GateState{last_.mode, last_.reason});
}

}  // namespace racestack::gate
