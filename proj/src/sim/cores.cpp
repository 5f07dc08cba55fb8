#include "racestack/sim/cores.hpp"

#include <algorithm>
#include <cmath>

#include "racestack/sim/vehicle.hpp"

namespace racestack::sim {

namespace {

template <class T>
void declare(params::ParameterStore& store, const params::ParameterView& view, std::string_view name, T value,
             std::string text) {
  store.declare_if_absent({view.qualified(name), params::ParameterValue{std::move(value)}, false, std::move(text)});
}

const kit::PortSample* find_port(const kit::CoreInputs& in, std::string_view name) {
  auto it = in.ports.find(name);
  return it == in.ports.end() ? nullptr : &it->second;
}

template <class T>
const T* fresh_value(const kit::CoreInputs& in, std::string_view name) {
  const auto* p = find_port(in, name);
  return p && p->fresh ? p->get<T>() : nullptr;
}

// Index of the segment [i, i+1] containing s, or nullopt outside the trajectory.
std::optional<std::size_t> segment_of(const msg::Trajectory& t, double s) {
  const auto& p = t.points;
  if (p.size() < 2 || s < p.front().s || s > p.back().s) return std::nullopt;
  auto it = std::upper_bound(p.begin(), p.end(), s, [](double x, const msg::TrajectoryPoint& q) { return x < q.s; });
  auto i = static_cast<std::size_t>(std::distance(p.begin(), it));
  if (i == 0) return 0;
  return std::min(i - 1, p.size() - 2);
}

}  // namespace

double speed_target_at(const msg::Trajectory& t, double s) {
  const auto& p = t.points;
  if (p.empty()) return 0.0;
  if (s <= p.front().s) return p.front().speed_target;
  if (s >= p.back().s) return p.back().speed_target;
  auto i = *segment_of(t, s);
  const double ds = p[i + 1].s - p[i].s;
  if (ds <= 0.0) return p[i + 1].speed_target;
  const double f = (s - p[i].s) / ds;
  return p[i].speed_target + f * (p[i + 1].speed_target - p[i].speed_target);
}

double feedforward_accel_at(const msg::Trajectory& t, double s) {
  auto i = segment_of(t, s);
  if (!i) return 0.0;
  const auto& a = t.points[*i];
  const auto& b = t.points[*i + 1];
  const double ds = b.s - a.s;
  if (ds <= 0.0) return 0.0;
  return (b.speed_target * b.speed_target - a.speed_target * a.speed_target) / (2.0 * ds);
}

msg::Trajectory emergency_profile(double s0, double v0, double decel, double dt) {
  msg::Trajectory t;
  t.kind = msg::TrajectoryKind::Emergency;
  double s = s0;
  double v = std::max(v0, 0.0);
  t.points.push_back({s, v});
  while (v > 0.0) {
    const double v1 = v - decel * dt;
    if (v1 <= 0.0) {
      s += v * v / (2.0 * decel);
      v = 0.0;
    } else {
      s += 0.5 * (v + v1) * dt;
      v = v1;
    }
    t.points.push_back({s, v});
  }
  if (t.points.size() < 2) t.points.push_back({s, 0.0});
  return t;
}

msg::Trajectory performance_profile(double s0, double v0, double target, double accel, double decel, double dt,
                                    std::size_t points) {
  msg::Trajectory t;
  t.kind = msg::TrajectoryKind::Performance;
  double s = s0;
  double v = std::max(v0, 0.0);
  t.points.push_back({s, v});
  for (std::size_t i = 1; i < std::max<std::size_t>(points, 2); ++i) {
    const double v1 = v + std::clamp(target - v, -decel * dt, accel * dt);
    s += 0.5 * (v + v1) * dt;
    v = v1;
    t.points.push_back({s, v});
  }
  return t;
}

std::optional<std::string> check_trajectory(const msg::Trajectory& t) {
  if (t.points.size() < 2) return "fewer than 2 points";
  for (std::size_t i = 0; i < t.points.size(); ++i) {
    const auto& p = t.points[i];
    if (!std::isfinite(p.s) || !std::isfinite(p.speed_target)) return "non-finite point";
    if (p.speed_target < 0.0) return "negative speed target";
    if (i > 0 && p.s < t.points[i - 1].s) return "points not ordered by s";
  }
  if (t.kind == msg::TrajectoryKind::Emergency && t.points.back().speed_target != 0.0)
    return "emergency trajectory does not end at standstill";
  return std::nullopt;
}

// --- imu --------------------------------------------------------------------

kit::CoreOutputs ImuCore::step(const kit::CoreInputs& in, const params::ParameterView&) {
  const auto* truth = fresh_value<msg::VehicleState>(in, "truth");
  if (!truth) return kit::CoreOutputs::degraded(DiagnosticLevel::Error, "no vehicle truth");
  double accel = 0.0;
  if (last_ && in.now > last_->first) accel = (truth->speed - last_->second) / to_seconds(in.now - last_->first);
  last_ = {in.now, truth->speed};
  kit::CoreOutputs out;
  out.emit("imu", msg::ImuSample{truth->position_s, truth->lateral_offset, truth->speed, accel});
  return out;
}

// --- state estimation ----------------------------------------------------------

kit::CoreOutputs StateEstimationCore::step(const kit::CoreInputs& in, const params::ParameterView&) {
  const auto& imu = in.port("imu");
  const auto* sample = imu.get<msg::ImuSample>();
  if (!sample) return kit::CoreOutputs::degraded(DiagnosticLevel::Error, "waiting for inertial data");
  kit::CoreOutputs out;
  msg::Odometry odom{sample->s, sample->lateral_offset, sample->speed, imu.fresh};
  out.signals = {odom.s, odom.speed, odom.lateral_offset};
  out.emit("odometry", odom);
  if (!imu.fresh) {
    out.level = DiagnosticLevel::Stale;
    out.detail = "lost all inertial inputs";
  }
  return out;
}

// --- planner ----------------------------------------------------------------------

void PlannerCore::declare_parameters(params::ParameterStore& store, const params::ParameterView& view) {
  declare(store, view, "accel_mps2", 4.0, "performance profile acceleration");
  declare(store, view, "decel_mps2", 3.0, "performance profile deceleration");
  declare(store, view, "emergency_decel_mps2", 10.0, "emergency trajectory deceleration");
  declare(store, view, "horizon_s", 4.0, "performance trajectory horizon");
  declare(store, view, "dt_s", 0.1, "trajectory sample spacing");
}

kit::CoreOutputs PlannerCore::step(const kit::CoreInputs& in, const params::ParameterView& params) {
  const auto* odom = fresh_value<msg::Odometry>(in, "odometry");
  if (!odom || !odom->valid) return kit::CoreOutputs::degraded(DiagnosticLevel::Error, "no valid localization");
  double target = 0.0;
  if (const auto* a = fresh_value<msg::SafetyAction>(in, "action")) target = a->target_speed;

  const double dt = params.get_double("dt_s");
  const auto n = static_cast<std::size_t>(std::llround(params.get_double("horizon_s") / dt));
  msg::TrajectorySet set;
  set.performance = performance_profile(odom->s, odom->speed, target, params.get_double("accel_mps2"),
                                        params.get_double("decel_mps2"), dt, n);
  set.emergency = emergency_profile(odom->s, odom->speed, params.get_double("emergency_decel_mps2"), dt);
  const std::uint64_t id = next_id_++;
  for (auto* t : {&set.performance, &set.emergency}) {
    t->stamp = in.now;
    t->id = id;
  }
  kit::CoreOutputs out;
  out.signals = {odom->speed, target, static_cast<double>(id)};
  out.emit("trajectory", std::move(set));
  return out;
}

// --- controller --------------------------------------------------------------------

void ControllerCore::declare_parameters(params::ParameterStore& store, const params::ParameterView& view) {
  declare(store, view, "kp", 1.0, "speed error gain [1/s]");
  declare(store, view, "k_steer", 0.05, "lateral offset gain [rad/m]");
  declare(store, view, "lookahead_s", 0.3, "preview time for controller.lookahead");
  declare(store, view, "hold_decel_mps2", 2.0, "minimum deceleration when the target is standstill");
  declare(store, view, "fallback_accel_mps2", 3.0, "acceleration limit without any trajectory");
  declare(store, view, "emergency_decel_mps2", 10.0, "deceleration of a synthesized emergency trajectory");
  declare(store, view, "max_brake_bar", 100.0, "brake command limit");
  declare(store, view, "mass_kg", 800.0, "vehicle model mass");
  declare(store, view, "f_max_n", 8000.0, "vehicle model drive force");
  declare(store, view, "k_brake_n_per_bar", 250.0, "vehicle model brake gain");
  declare(store, view, "c_drag", 1.2, "vehicle model drag");
}

std::optional<std::string> ControllerCore::validate(std::string_view port, const Message& m) const {
  if (port != "trajectory") return std::nullopt;
  const auto* set = std::get_if<msg::TrajectorySet>(&m);
  if (!set) return "not a trajectory set";
  if (auto why = check_trajectory(set->performance)) return "performance: " + *why;
  if (set->emergency.kind != msg::TrajectoryKind::Emergency) return "emergency slot holds a performance trajectory";
  if (auto why = check_trajectory(set->emergency)) return "emergency: " + *why;
  return std::nullopt;
}

kit::CoreOutputs ControllerCore::step(const kit::CoreInputs& in, const params::ParameterView& params) {
  const auto* odom = in.port("odometry").get<msg::Odometry>();
  if (!odom || !odom->valid) {
    return kit::CoreOutputs::degraded(DiagnosticLevel::Stale, "localization invalid");
  }
  const double v = odom->speed;
  const auto* traj = fresh_value<msg::TrajectorySet>(in, "trajectory");
  const auto* action = fresh_value<msg::SafetyAction>(in, "action");

  const bool new_set = traj && (!last_seen_id_ || *last_seen_id_ != traj->performance.id);
  if (traj) last_seen_id_ = traj->performance.id;

  if (on_emergency_ && v < kStandstillSpeed && traj && action &&
      (action->action == SafetyActionKind::Nominal || action->action == SafetyActionKind::SafeStop)) {
    on_emergency_ = false;
    latched_ = *traj;
  } else if (new_set) {
    if (on_emergency_)
      ++rejected_;
    else
      latched_ = *traj;
  }

  if (!on_emergency_) {
    const bool commanded = action && (action->action == SafetyActionKind::EmergencyStop ||
                                      action->action == SafetyActionKind::HardEmergency);
    if (commanded || (latched_ && !traj)) {
      on_emergency_ = true;
      if (!latched_) {
        latched_.emplace();
        latched_->emergency = emergency_profile(odom->s, v, params.get_double("emergency_decel_mps2"), 0.1);
        latched_->performance = latched_->emergency;
      }
    }
  }

  const double s = lookahead_ ? odom->s + v * params.get_double("lookahead_s") : odom->s;
  const double kp = params.get_double("kp");
  double v_target = 0.0;
  double a = 0.0;
  if (latched_) {
    const auto& active = on_emergency_ ? latched_->emergency : latched_->performance;
    v_target = speed_target_at(active, s);
    a = feedforward_accel_at(active, s) + kp * (v_target - v);
  } else {
    // Nothing planned yet: follow the action's target speed gently, or hold speed.
    v_target = action ? action->target_speed : v;
    const double lim = params.get_double("fallback_accel_mps2");
    a = std::clamp(kp * (v_target - v), -lim, lim);
  }
  if (v_target <= 0.0) a = std::min(a, -params.get_double("hold_decel_mps2"));

  const double mass = params.get_double("mass_kg");
  const double force = mass * a + params.get_double("c_drag") * v * v;
  msg::ActuationCommand cmd;
  if (force >= 0.0) {
    cmd.throttle = std::min(1.0, force / params.get_double("f_max_n"));
  } else {
    cmd.brake_pressure = std::min(params.get_double("max_brake_bar"), -force / params.get_double("k_brake_n_per_bar"));
  }
  cmd.steering_angle = -params.get_double("k_steer") * odom->lateral_offset;
  cmd.stamp = in.now;

  kit::CoreOutputs out;
  out.signals = {v, v_target, a, cmd.throttle, cmd.brake_pressure, on_emergency_ ? 1.0 : 0.0,
                 static_cast<double>(rejected_)};
  out.emit("actuation", cmd);
  if (on_emergency_) {
    out.level = DiagnosticLevel::Warn;
    out.detail = "tracking emergency trajectory";
  }
  return out;
}

// --- driving conditions --------------------------------------------------------------

void ConditionsMonitorCore::declare_parameters(params::ParameterStore& store, const params::ParameterView& view) {
  declare(store, view, "tracking_error_mps", 5.0, "speed error that counts as a tracking failure");
  declare(store, view, "tracking_sustain_ms", std::int64_t{200}, "how long the error must persist");
  declare(store, view, "link_grace_ms", std::int64_t{300}, "link counts as up this long before the first heartbeat");
}

kit::CoreOutputs ConditionsMonitorCore::step(const kit::CoreInputs& in, const params::ParameterView& params) {
  const auto* vehicle = fresh_value<msg::VehicleState>(in, "vehicle");
  if (!vehicle) return kit::CoreOutputs::degraded(DiagnosticLevel::Error, "no vehicle state");
  const auto* odom = fresh_value<msg::Odometry>(in, "odometry");
  const auto* traj = fresh_value<msg::TrajectorySet>(in, "trajectory");

  msg::DrivingConditions c;
  c.speed = vehicle->speed;
  c.lateral_offset = std::abs(vehicle->lateral_offset);
  c.localization_ok = odom && odom->valid;
  c.trajectory_valid = traj != nullptr;

  double err = 0.0;
  if (c.localization_ok && traj) {
    err = std::abs(odom->speed - speed_target_at(traj->performance, odom->s));
    if (err > params.get_double("tracking_error_mps")) {
      if (!error_since_) error_since_ = in.now;
    } else {
      error_since_.reset();
    }
  } else {
    error_since_.reset();
  }
  const SimTime sustain = std::chrono::milliseconds(params.get_int("tracking_sustain_ms"));
  c.tracking_ok = c.localization_ok && !(error_since_ && in.now - *error_since_ >= sustain);

  c.basestation_link_ok = true;
  if (const auto* hb = find_port(in, "heartbeat")) {
    // Grace period: before the first heartbeat the link counts as up until one timeout has passed.
    const bool never = !hb->last_rx;
    c.basestation_link_ok = hb->fresh || (never && in.now <= std::chrono::milliseconds(params.get_int("link_grace_ms")));
  }

  kit::CoreOutputs out;
  out.signals = {err, c.tracking_ok ? 1.0 : 0.0};
  out.emit("conditions", c);
  return out;
}

// --- chain ---------------------------------------------------------------------------

kit::CoreOutputs ChainSourceCore::step(const kit::CoreInputs&, const params::ParameterView&) {
  kit::CoreOutputs out;
  out.emit("out", msg::Sample{count_});
  count_ += 1.0;
  return out;
}

kit::CoreOutputs ChainRelayCore::step(const kit::CoreInputs& in, const params::ParameterView&) {
  kit::CoreOutputs out;
  if (const auto* s = in.get<msg::Sample>("in")) out.emit("out", msg::Sample{s->value});
  return out;
}

kit::CoreRegistry default_core_registry() {
  kit::CoreRegistry r;
  r.add("imu.sim", [] { return std::make_unique<ImuCore>(); });
  r.add("state_estimation.passthrough", [] { return std::make_unique<StateEstimationCore>(); });
  r.add("planner.profile", [] { return std::make_unique<PlannerCore>(); });
  r.add("controller.proportional", [] { return std::make_unique<ControllerCore>(false); });
  r.add("controller.lookahead", [] { return std::make_unique<ControllerCore>(true); });
  r.add("conditions.monitor", [] { return std::make_unique<ConditionsMonitorCore>(); });
  r.add("chain.source", [] { return std::make_unique<ChainSourceCore>(); });
  r.add("chain.relay", [] { return std::make_unique<ChainRelayCore>(); });
  return r;
}

}  // namespace racestack::sim
