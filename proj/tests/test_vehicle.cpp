#include <doctest.h>

#include "oracles/braking.hpp"
#include "racestack/sim/vehicle.hpp"

using namespace racestack;
using namespace racestack::sim;

namespace {

SimErrc code_of(auto&& f) {
  try {
    f();
  } catch (const SimError& e) {
    return e.code();
  }
  FAIL("no SimError thrown");
  return SimErrc::InvalidDt;
}

msg::ActuationCommand brake(double bar) {
  msg::ActuationCommand c;
  c.brake_pressure = bar;
  return c;
}

double integrate_stop(double v0, double bar, double dt, const VehicleParams& p) {
  msg::VehicleState s;
  s.speed = v0;
  for (int i = 0; i < 10'000'000 && s.speed > 0.0; ++i) s = vehicle_step(s, brake(bar), dt, p);
  return s.position_s;
}

}  // namespace

TEST_CASE("stopping distance without drag matches the closed form") {
  VehicleParams p;
  p.c_drag = 0.0;
  const double want = oracle::stopping_distance(75.0, 40.0 * p.k_brake_n_per_bar, p.mass_kg);
  CHECK(want == doctest::Approx(225.0));
  for (double dt : {0.0005, 0.002, 0.01, 0.05}) {
    CAPTURE(dt);
    CHECK(integrate_stop(75.0, 40.0, dt, p) == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("stopping distance with drag converges to the closed form") {
  const VehicleParams p;
  const double want = oracle::stopping_distance_with_drag(75.0, 40.0 * p.k_brake_n_per_bar, p.c_drag, p.mass_kg);
  const double coarse = std::abs(integrate_stop(75.0, 40.0, 0.01, p) - want);
  const double fine = std::abs(integrate_stop(75.0, 40.0, 0.001, p) - want);
  CHECK(fine < 0.05);
  CHECK(fine < coarse);
}

TEST_CASE("full throttle approaches terminal speed") {
  const VehicleParams p;
  msg::VehicleState s;
  msg::ActuationCommand full;
  full.throttle = 1.0;
  for (int i = 0; i < 200000; ++i) s = vehicle_step(s, full, 0.002, p);
  CHECK(s.speed == doctest::Approx(oracle::terminal_speed(p.f_max_n, p.c_drag)).epsilon(1e-6));
  CHECK(s.throttle_applied == 1.0);
}

TEST_CASE("inputs are clamped and validated") {
  msg::VehicleState s;
  s.speed = 10.0;
  msg::ActuationCommand c;
  c.throttle = 3.0;
  c.brake_pressure = -5.0;
  const auto n = vehicle_step(s, c, 0.01);
  CHECK(n.throttle_applied == 1.0);
  CHECK(n.brake_pressure_applied == 0.0);
  CHECK(code_of([&] { vehicle_step(s, c, 0.0); }) == SimErrc::InvalidDt);
  CHECK(code_of([&] { vehicle_step(s, c, NAN); }) == SimErrc::InvalidDt);
  c.steering_angle = INFINITY;
  CHECK(code_of([&] { vehicle_step(s, c, 0.01); }) == SimErrc::InvalidActuation);
}

TEST_CASE("standstill is absorbing under brake") {
  msg::VehicleState s;
  for (int i = 0; i < 10; ++i) s = vehicle_step(s, brake(40.0), 0.002);
  CHECK(s.speed == 0.0);
  CHECK(s.position_s == 0.0);
}

TEST_CASE("plant on the bus brakes 75 m/s to rest in 225 m") {
  bus::Bus bus;
  params::ParameterStore store;
  bus.register_topic({"/vehicle/actuation", MessageType::ActuationCommand, 10ms, 1});
  bus.register_topic({"/vehicle/state", MessageType::VehicleState, 2ms, 1});
  declare_vehicle_parameters(store);
  store.set("vehicle.c_drag", 0.0);
  auto pub = bus.advertise(bus.topic("/vehicle/actuation"), "gate");
  bus.schedule_at(0ms, [&](SimTime) { bus.publish(pub, brake(40.0)); }, "gate");
  VehiclePlant plant(bus, store, 75.0);
  bus.run_until(10s);
  CHECK(plant.state().speed == 0.0);
  CHECK(std::abs(plant.state().position_s - 225.0) <= 0.5);
  CHECK(plant.applied().brake_pressure == 40.0);
}

TEST_CASE("lateral offset ramps linearly") {
  bus::Bus bus;
  params::ParameterStore store;
  bus.register_topic({"/vehicle/actuation", MessageType::ActuationCommand, 10ms, 1});
  bus.register_topic({"/vehicle/state", MessageType::VehicleState, 2ms, 1});
  VehiclePlant plant(bus, store, 0.0);
  std::vector<std::pair<SimTime, double>> offsets;
  bus.subscribe(bus.topic("/vehicle/state"), [&](const bus::Envelope& e) {
    offsets.emplace_back(bus.now(), e.get<msg::VehicleState>()->lateral_offset);
  }, "probe");
  bus.schedule_at(100ms, [&](SimTime) { plant.set_lateral_offset(3.0, 1000ms); }, "scenario");
  bus.run_until(1200ms);
  for (const auto& [t, off] : offsets) {
    CAPTURE(t.count());
    const double want = t <= 100ms ? 0.0 : std::min(3.0, 3.0 * to_seconds(t - 100ms));
    CHECK(off == doctest::Approx(want).epsilon(1e-12));
  }
}
