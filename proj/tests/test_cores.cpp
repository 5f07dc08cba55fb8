#include <doctest.h>

#include <cmath>
#include <memory>

#include "racestack/sim/cores.hpp"
#include "racestack/sim/vehicle.hpp"

using namespace racestack;
using namespace racestack::sim;
using namespace std::chrono_literals;

namespace {

template <class T>
kit::PortSample sample(T value, bool fresh = true) {
  kit::PortSample p;
  p.value = std::make_shared<const Message>(std::move(value));
  p.fresh = fresh;
  p.last_rx = SimTime{0};
  return p;
}

msg::Trajectory line(std::initializer_list<msg::TrajectoryPoint> pts,
                     msg::TrajectoryKind kind = msg::TrajectoryKind::Performance) {
  msg::Trajectory t;
  t.kind = kind;
  t.points = pts;
  return t;
}

msg::TrajectorySet set_with_id(double s0, double v, std::uint64_t id) {
  msg::TrajectorySet s;
  s.performance = performance_profile(s0, v, v, 4.0, 3.0, 0.1, 40);
  s.emergency = emergency_profile(s0, v, 10.0, 0.1);
  s.performance.id = s.emergency.id = id;
  return s;
}

// Each core gets its own store so declared defaults are visible.
struct Host {
  params::ParameterStore store;
  params::ParameterView view{store, "m"};
  explicit Host(kit::AlgorithmCore& core) { core.declare_parameters(store, view); }
};

}  // namespace

TEST_CASE("speed target interpolates and clamps at the ends") {
  auto t = line({{0, 10}, {10, 20}, {30, 0}});
  CHECK(speed_target_at(t, -5) == 10);
  CHECK(speed_target_at(t, 5) == doctest::Approx(15));
  CHECK(speed_target_at(t, 20) == doctest::Approx(10));
  CHECK(speed_target_at(t, 99) == 0);
  CHECK(speed_target_at(msg::Trajectory{}, 3) == 0);
  // v1^2 - v0^2 over 2 ds
  CHECK(feedforward_accel_at(t, 5) == doctest::Approx((400.0 - 100.0) / 20.0));
  CHECK(feedforward_accel_at(t, 50) == 0);
}

TEST_CASE("emergency profile ends at standstill and covers the braking distance") {
  for (double v0 : {0.0, 0.05, 12.0, 75.0}) {
    auto t = emergency_profile(100.0, v0, 10.0, 0.1);
    CHECK_FALSE(check_trajectory(t));
    CHECK(t.points.back().speed_target == 0.0);
    CHECK(t.points.back().s - 100.0 == doctest::Approx(v0 * v0 / 20.0).epsilon(1e-9));
  }
  auto p = performance_profile(0, 10, 20, 4, 3, 0.1, 40);
  CHECK(p.points.size() == 40);
  CHECK(p.points.back().speed_target == doctest::Approx(20));
  CHECK_FALSE(check_trajectory(p));
}

TEST_CASE("trajectory checks reject malformed input") {
  CHECK(check_trajectory(line({{0, 1}})) == "fewer than 2 points");
  CHECK(check_trajectory(line({{0, 1}, {1, NAN}})) == "non-finite point");
  CHECK(check_trajectory(line({{0, 1}, {1, -1}})) == "negative speed target");
  CHECK(check_trajectory(line({{2, 1}, {1, 1}})) == "points not ordered by s");
  CHECK(check_trajectory(line({{0, 5}, {1, 1}}, msg::TrajectoryKind::Emergency)).has_value());
}

TEST_CASE("imu and state estimation degrade without input") {
  ImuCore imu;
  params::ParameterStore store;
  params::ParameterView view{store};
  kit::CoreInputs in;
  auto out = imu.step(in, view);
  CHECK(out.level == DiagnosticLevel::Error);
  CHECK(out.publish.empty());

  in.ports["truth"] = sample(msg::VehicleState{5, 0.2, 10});
  in.now = 10ms;
  imu.step(in, view);
  in.ports["truth"] = sample(msg::VehicleState{5.1, 0.2, 11});
  in.now = 20ms;
  out = imu.step(in, view);
  REQUIRE(out.publish.size() == 1);
  CHECK(std::get<msg::ImuSample>(out.publish[0].second).accel == doctest::Approx(100.0));

  StateEstimationCore se;
  kit::CoreInputs sin;
  sin.ports["imu"] = {};
  CHECK(se.step(sin, view).level == DiagnosticLevel::Error);
  sin.ports["imu"] = sample(msg::ImuSample{1, 2, 3, 0});
  out = se.step(sin, view);
  CHECK(out.level == DiagnosticLevel::Ok);
  CHECK(out.signals == std::vector<double>{1, 3, 2});
  sin.ports["imu"] = sample(msg::ImuSample{1, 2, 3, 0}, false);
  out = se.step(sin, view);
  CHECK(out.level == DiagnosticLevel::Stale);
  REQUIRE(out.publish.size() == 1);
  CHECK_FALSE(std::get<msg::Odometry>(out.publish[0].second).valid);
}

TEST_CASE("planner publishes both trajectories with a shared id") {
  PlannerCore planner;
  Host h(planner);
  kit::CoreInputs in;
  CHECK(planner.step(in, h.view).level == DiagnosticLevel::Error);
  in.ports["odometry"] = sample(msg::Odometry{0, 0, 10, false});
  CHECK(planner.step(in, h.view).detail == "no valid localization");

  in.ports["odometry"] = sample(msg::Odometry{50, 0, 10, true});
  in.ports["action"] = sample(msg::SafetyAction{SafetyActionKind::Nominal, "", 20});
  auto a = planner.step(in, h.view);
  auto b = planner.step(in, h.view);
  REQUIRE(a.publish.size() == 1);
  const auto& set = std::get<msg::TrajectorySet>(a.publish[0].second);
  CHECK(set.performance.id == set.emergency.id);
  CHECK(set.performance.points.size() == 40);
  CHECK(set.emergency.kind == msg::TrajectoryKind::Emergency);
  CHECK(set.performance.points.front().s == 50);
  CHECK(std::get<msg::TrajectorySet>(b.publish[0].second).performance.id == set.performance.id + 1);
  CHECK(a.signals == std::vector<double>{10, 20, 1});
}

TEST_CASE("controller validation") {
  ControllerCore c;
  CHECK_FALSE(c.validate("action", Message{msg::Sample{}}));
  CHECK(c.validate("trajectory", Message{msg::Sample{}}) == "not a trajectory set");
  auto good = set_with_id(0, 10, 1);
  CHECK_FALSE(c.validate("trajectory", Message{good}));
  auto swapped = good;
  swapped.emergency = swapped.performance;
  CHECK(c.validate("trajectory", Message{swapped}) == "emergency slot holds a performance trajectory");
  auto bad = good;
  bad.performance.points.resize(1);
  CHECK(c.validate("trajectory", Message{bad})->starts_with("performance:"));
}

TEST_CASE("controller latches the emergency trajectory and rejects new sets") {
  ControllerCore c;
  Host h(c);
  kit::CoreInputs in;
  in.ports["odometry"] = {};
  CHECK(c.step(in, h.view).level == DiagnosticLevel::Stale);

  in.ports["odometry"] = sample(msg::Odometry{0, 0.5, 20, true});
  in.ports["trajectory"] = sample(set_with_id(0, 20, 1));
  in.ports["action"] = sample(msg::SafetyAction{SafetyActionKind::Nominal, "", 20});
  auto out = c.step(in, h.view);
  CHECK_FALSE(c.on_emergency());
  CHECK(out.level == DiagnosticLevel::Ok);
  const auto& cmd = std::get<msg::ActuationCommand>(out.publish[0].second);
  CHECK(cmd.steering_angle == doctest::Approx(-0.05 * 0.5));
  CHECK(cmd.throttle > 0.0);  // drag needs forward force

  // Trajectory goes stale: fall back to the latched emergency trajectory.
  in.ports["trajectory"].fresh = false;
  out = c.step(in, h.view);
  CHECK(c.on_emergency());
  CHECK(out.level == DiagnosticLevel::Warn);
  CHECK(std::get<msg::ActuationCommand>(out.publish[0].second).brake_pressure > 0.0);

  // New sets are rejected while moving, counted once per id.
  in.ports["trajectory"] = sample(set_with_id(0, 20, 2));
  c.step(in, h.view);
  c.step(in, h.view);
  CHECK(c.rejected() == 1);
  CHECK(c.latched()->performance.id == 1);

  // At standstill with a permissive action the new set is taken.
  in.ports["odometry"] = sample(msg::Odometry{10, 0, 0.0, true});
  in.ports["trajectory"] = sample(set_with_id(10, 0, 3));
  c.step(in, h.view);
  CHECK_FALSE(c.on_emergency());
  CHECK(c.latched()->performance.id == 3);
}

TEST_CASE("controller without any plan follows the action and synthesizes an emergency stop") {
  ControllerCore c(true);
  CHECK(c.name() == "controller.lookahead");
  Host h(c);
  kit::CoreInputs in;
  in.ports["odometry"] = sample(msg::Odometry{0, 0, 10, true});
  in.ports["action"] = sample(msg::SafetyAction{SafetyActionKind::SafeStop, "", 0});
  auto out = c.step(in, h.view);
  CHECK_FALSE(c.on_emergency());
  // target 0 forces at least the hold deceleration
  CHECK(out.signals[2] <= -2.0);

  in.ports["action"] = sample(msg::SafetyAction{SafetyActionKind::EmergencyStop, "", 0});
  out = c.step(in, h.view);
  CHECK(c.on_emergency());
  REQUIRE(c.latched());
  CHECK(c.latched()->emergency.points.back().speed_target == 0.0);
  const auto& cmd = std::get<msg::ActuationCommand>(out.publish[0].second);
  CHECK(cmd.brake_pressure > 0.0);
  CHECK(cmd.brake_pressure <= 100.0);
}

TEST_CASE("conditions monitor") {
  ConditionsMonitorCore m;
  Host h(m);
  kit::CoreInputs in;
  CHECK(m.step(in, h.view).detail == "no vehicle state");

  in.ports["vehicle"] = sample(msg::VehicleState{0, -1.5, 30});
  in.ports["odometry"] = sample(msg::Odometry{0, -1.5, 30, true});
  in.ports["trajectory"] = sample(set_with_id(0, 10, 1));  // 20 m/s error
  auto cond = [&](SimTime t) {
    in.now = t;
    auto out = m.step(in, h.view);
    return std::get<msg::DrivingConditions>(out.publish[0].second);
  };
  auto c = cond(1000ms);
  CHECK(c.tracking_ok);
  CHECK(c.lateral_offset == 1.5);
  CHECK(c.trajectory_valid);
  CHECK(cond(1199ms).tracking_ok);
  CHECK_FALSE(cond(1200ms).tracking_ok);
  // error cleared resets the sustain window
  in.ports["trajectory"] = sample(set_with_id(0, 30, 2));
  CHECK(cond(1210ms).tracking_ok);

  in.ports["trajectory"].fresh = false;
  in.ports["odometry"].fresh = false;
  c = cond(1220ms);
  CHECK_FALSE(c.trajectory_valid);
  CHECK_FALSE(c.localization_ok);
  CHECK_FALSE(c.tracking_ok);

  // Heartbeat port: grace before the first heartbeat, then freshness decides.
  kit::PortSample hb;
  in.ports["heartbeat"] = hb;
  CHECK(cond(300ms).basestation_link_ok);
  CHECK_FALSE(cond(301ms).basestation_link_ok);
  in.ports["heartbeat"] = sample(msg::Sample{1});
  CHECK(cond(5000ms).basestation_link_ok);
  in.ports["heartbeat"].fresh = false;
  CHECK_FALSE(cond(5000ms).basestation_link_ok);
}

TEST_CASE("chain cores count and relay") {
  ChainSourceCore src;
  ChainRelayCore relay;
  params::ParameterStore store;
  params::ParameterView view{store};
  kit::CoreInputs in;
  CHECK(std::get<msg::Sample>(src.step(in, view).publish[0].second).value == 0);
  CHECK(std::get<msg::Sample>(src.step(in, view).publish[0].second).value == 1);
  in.ports["in"] = {};
  CHECK(relay.step(in, view).publish.empty());
  in.ports["in"] = sample(msg::Sample{7});
  CHECK(std::get<msg::Sample>(relay.step(in, view).publish[0].second).value == 7);
}

TEST_CASE("default registry") {
  auto r = default_core_registry();
  for (const char* n : {"imu.sim", "state_estimation.passthrough", "planner.profile", "controller.proportional",
                        "controller.lookahead", "conditions.monitor", "chain.source", "chain.relay"}) {
    CHECK(r.contains(n));
    CHECK(r.create(n)->name() == n);
  }
  CHECK(r.names().size() == 8);
}
