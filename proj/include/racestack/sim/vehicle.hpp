#pragma once

// Longitudinal point-mass plant. Lateral motion is not simulated; the lateral
// offset is a scripted channel so scenarios can trip the lateral rule.

#include <optional>

#include "racestack/bus.hpp"
#include "racestack/messages.hpp"
#include "racestack/params.hpp"
#include "racestack/sim/error.hpp"

namespace racestack::sim {

struct VehicleParams {
  double mass_kg = 800.0;
  double k_brake_n_per_bar = 250.0;
  double f_max_n = 8000.0;
  double c_drag = 1.2;  // N s^2 / m^2
};

// accel = (throttle F_max - k_brake p - c_drag v^2) / m. A step that would
// reverse the vehicle ends at the exact stopping point instead.
msg::VehicleState vehicle_step(const msg::VehicleState& state, const msg::ActuationCommand& act, double dt,
                               const VehicleParams& p = {});

inline constexpr double kStandstillSpeed = 0.1;

void declare_vehicle_parameters(params::ParameterStore& store);
VehicleParams vehicle_params_from(const params::ParameterStore& store);

struct PlantTopics {
  std::string actuation = "/vehicle/actuation";
  std::string state = "/vehicle/state";
};

// Applies the latest gate output every vehicle.step_ms and publishes the truth.
class VehiclePlant {
 public:
  VehiclePlant(bus::Bus& bus, params::ParameterStore& store, double initial_speed, const PlantTopics& topics = {});

  // Linear ramp from the current offset to `target` over `ramp`.
  void set_lateral_offset(double target, SimTime ramp);

  const msg::VehicleState& state() const { return state_; }
  const msg::ActuationCommand& applied() const { return act_; }

 private:
  void step(SimTime now);
  double offset_at(SimTime now) const;

  bus::Bus* bus_;
  params::ParameterStore* store_;
  msg::VehicleState state_;
  msg::ActuationCommand act_;
  bus::PublisherHandle pub_;
  SimTime dt_;
  struct Ramp {
    double from = 0.0;
    double to = 0.0;
    SimTime start{0};
    SimTime length{0};
  };
  std::optional<Ramp> ramp_;
};

}  // namespace racestack::sim
