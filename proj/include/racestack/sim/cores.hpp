#pragma once

// Minimal algorithm cores for the simulated stack. They exist to exercise the
// safety concept, not to drive well.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "racestack/module.hpp"

namespace racestack::sim {

// Linear interpolation of the speed target at `s`; clamps to the end points.
double speed_target_at(const msg::Trajectory& t, double s);
// Feed-forward acceleration d(v^2/2)/ds on the segment containing `s`; 0 outside.
double feedforward_accel_at(const msg::Trajectory& t, double s);

// Constant-deceleration stop from (s0, v0), sampled every dt, ending at 0 m/s.
msg::Trajectory emergency_profile(double s0, double v0, double decel, double dt);
// Speed ramp from (s0, v0) toward `target` with separate accel/decel limits.
msg::Trajectory performance_profile(double s0, double v0, double target, double accel, double decel, double dt,
                                    std::size_t points);

// Empty when well formed; otherwise the first violated property.
std::optional<std::string> check_trajectory(const msg::Trajectory& t);

class ImuCore final : public kit::AlgorithmCore {
 public:
  std::string_view name() const override { return "imu.sim"; }
  kit::CoreOutputs step(const kit::CoreInputs& in, const params::ParameterView& params) override;

 private:
  std::optional<std::pair<SimTime, double>> last_;
};

class StateEstimationCore final : public kit::AlgorithmCore {
 public:
  std::string_view name() const override { return "state_estimation.passthrough"; }
  std::vector<std::string> signal_names() const override { return {"s", "speed", "lateral_offset"}; }
  kit::CoreOutputs step(const kit::CoreInputs& in, const params::ParameterView& params) override;
};

class PlannerCore final : public kit::AlgorithmCore {
 public:
  std::string_view name() const override { return "planner.profile"; }
  void declare_parameters(params::ParameterStore& store, const params::ParameterView& view) override;
  std::vector<std::string> signal_names() const override { return {"v0", "v_target", "trajectory_id"}; }
  kit::CoreOutputs step(const kit::CoreInputs& in, const params::ParameterView& params) override;

 private:
  std::uint64_t next_id_ = 1;
};

// Tracks the performance trajectory of the latched set and falls back to its
// emergency trajectory. While on the emergency trajectory no new set is accepted
// until the vehicle stands still and the safety action allows driving again.
class ControllerCore final : public kit::AlgorithmCore {
 public:
  explicit ControllerCore(bool lookahead = false) : lookahead_(lookahead) {}
  std::string_view name() const override { return lookahead_ ? "controller.lookahead" : "controller.proportional"; }
  void declare_parameters(params::ParameterStore& store, const params::ParameterView& view) override;
  std::vector<std::string> signal_names() const override {
    return {"v", "v_target", "a_cmd", "throttle", "brake", "on_emergency", "rejected"};
  }
  std::optional<std::string> validate(std::string_view port, const Message& m) const override;
  kit::CoreOutputs step(const kit::CoreInputs& in, const params::ParameterView& params) override;

  bool on_emergency() const { return on_emergency_; }
  std::uint64_t rejected() const { return rejected_; }
  const std::optional<msg::TrajectorySet>& latched() const { return latched_; }

 private:
  bool lookahead_;
  std::optional<msg::TrajectorySet> latched_;
  std::optional<std::uint64_t> last_seen_id_;
  bool on_emergency_ = false;
  std::uint64_t rejected_ = 0;
};

class ConditionsMonitorCore final : public kit::AlgorithmCore {
 public:
  std::string_view name() const override { return "conditions.monitor"; }
  void declare_parameters(params::ParameterStore& store, const params::ParameterView& view) override;
  std::vector<std::string> signal_names() const override { return {"tracking_error", "tracking_ok"}; }
  kit::CoreOutputs step(const kit::CoreInputs& in, const params::ParameterView& params) override;

 private:
  std::optional<SimTime> error_since_;
};

// Latency-measurement chain: a timer-driven source and subscription-triggered relays.
class ChainSourceCore final : public kit::AlgorithmCore {
 public:
  std::string_view name() const override { return "chain.source"; }
  kit::CoreOutputs step(const kit::CoreInputs& in, const params::ParameterView& params) override;

 private:
  double count_ = 0.0;
};

class ChainRelayCore final : public kit::AlgorithmCore {
 public:
  std::string_view name() const override { return "chain.relay"; }
  kit::CoreOutputs step(const kit::CoreInputs& in, const params::ParameterView& params) override;
};

kit::CoreRegistry default_core_registry();

}  // namespace racestack::sim
