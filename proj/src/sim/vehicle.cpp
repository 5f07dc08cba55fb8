#include "racestack/sim/vehicle.hpp"

#include <algorithm>
#include <cmath>

namespace racestack::sim {

msg::VehicleState vehicle_step(const msg::VehicleState& state, const msg::ActuationCommand& act, double dt,
                               const VehicleParams& p) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw SimError(SimErrc::InvalidDt, std::to_string(dt));
  if (!std::isfinite(act.throttle) || !std::isfinite(act.brake_pressure) || !std::isfinite(act.steering_angle))
    throw SimError(SimErrc::InvalidActuation, "non-finite actuation");

  const double throttle = std::clamp(act.throttle, 0.0, 1.0);
  const double brake = std::max(act.brake_pressure, 0.0);
  const double v = std::max(state.speed, 0.0);
  const double a = (throttle * p.f_max_n - p.k_brake_n_per_bar * brake - p.c_drag * v * v) / p.mass_kg;

  msg::VehicleState next = state;
  next.brake_pressure_applied = brake;
  next.throttle_applied = throttle;
  const double v1 = v + a * dt;
  if (v1 < 0.0) {
    // Brakes cannot push backwards: stop exactly where the deceleration runs out.
    const double t_stop = v / -a;
    next.position_s += 0.5 * v * t_stop;
    next.speed = 0.0;
  } else {
    next.position_s += 0.5 * (v + v1) * dt;
    next.speed = v1;
  }
  return next;
}

namespace {

template <class T>
void declare(params::ParameterStore& store, const std::string& name, T value, bool read_only, std::string text) {
  store.declare_if_absent({name, params::ParameterValue{std::move(value)}, read_only, std::move(text)});
}

}  // namespace

void declare_vehicle_parameters(params::ParameterStore& store) {
  declare(store, "vehicle.mass_kg", 800.0, false, "vehicle mass");
  declare(store, "vehicle.k_brake_n_per_bar", 250.0, false, "brake force per bar");
  declare(store, "vehicle.f_max_n", 8000.0, false, "drive force at full throttle");
  declare(store, "vehicle.c_drag", 1.2, false, "quadratic drag coefficient");
  declare(store, "vehicle.step_ms", 2.0, true, "plant integration step");
}

VehicleParams vehicle_params_from(const params::ParameterStore& store) {
  return {store.get_double("vehicle.mass_kg"), store.get_double("vehicle.k_brake_n_per_bar"),
          store.get_double("vehicle.f_max_n"), store.get_double("vehicle.c_drag")};
}

VehiclePlant::VehiclePlant(bus::Bus& bus, params::ParameterStore& store, double initial_speed,
                           const PlantTopics& topics)
    : bus_(&bus), store_(&store) {
  declare_vehicle_parameters(store);
  dt_ = from_ms(store.get_double("vehicle.step_ms"));
  state_.speed = initial_speed;
  pub_ = bus.advertise(bus.topic(topics.state), "vehicle");
  bus.subscribe(
      bus.topic(topics.actuation),
      [this](const bus::Envelope& env) {
        if (auto c = env.get<msg::ActuationCommand>()) act_ = *c;
      },
      "vehicle");
  bus.schedule_timer(dt_, [this](SimTime now) { step(now); }, "vehicle");
}

void VehiclePlant::set_lateral_offset(double target, SimTime ramp) {
  const SimTime now = bus_->now();
  ramp_ = Ramp{offset_at(now), target, now, ramp};
}

double VehiclePlant::offset_at(SimTime now) const {
  if (!ramp_) return state_.lateral_offset;
  if (ramp_->length.count() <= 0 || now >= ramp_->start + ramp_->length) return ramp_->to;
  const double f = static_cast<double>((now - ramp_->start).count()) / static_cast<double>(ramp_->length.count());
  return ramp_->from + (ramp_->to - ramp_->from) * f;
}

void VehiclePlant::step(SimTime now) {
  state_ = vehicle_step(state_, act_, to_seconds(dt_), vehicle_params_from(*store_));
  state_.lateral_offset = offset_at(now);
  bus_->publish(pub_, state_);
}

}  // namespace racestack::sim
