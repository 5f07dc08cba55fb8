#pragma once

// Last-stage actuation arbiter. Dominance: HardEmergency > ManualOverrideLongitudinal
// > ManualDriving > Autonomous. HardEmergency is entered by instruction or by an
// actuation-command timeout and stays latched until a confirmed reset at standstill.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "racestack/bus.hpp"
#include "racestack/messages.hpp"
#include "racestack/module.hpp"
#include "racestack/params.hpp"

namespace racestack::gate {

enum class GateErrc { NotAtStandstill, NotConfirmed };

std::string_view to_string(GateErrc c);

class GateError : public std::runtime_error {
 public:
  GateError(GateErrc code, const std::string& what);
  GateErrc code() const noexcept { return code_; }

 private:
  GateErrc code_;
};

struct GateParams {
  double brake_pressure_bar = 40.0;    // predefined emergency pressure
  double max_manual_brake_bar = 80.0;  // operator brake 1.0 maps here
  double max_brake_bar = 100.0;
  double max_steering_rad = 0.3;       // operator steering 1.0 maps here
  double standstill_mps = 0.1;
  SimTime actuation_timeout{std::chrono::milliseconds(50)};
  SimTime operator_timeout{std::chrono::milliseconds(250)};
  bool manual_entry_requires_standstill = true;
};

// Everything gate_step needs, already reduced to facts about "now".
struct GateStepInput {
  std::optional<msg::ActuationCommand> autonomy;  // latest well-formed command, if any
  bool autonomy_timed_out = false;
  std::optional<msg::OperatorInput> operator_input;  // only when fresh
  bool hard_emergency = false;                       // latched request
  bool manual_mode = false;
  SimTime now{0};
};

struct GateOutput {
  msg::ActuationCommand command;
  GateMode mode = GateMode::Autonomous;
  std::string reason;
};

// Pure mode resolution and output shaping.
GateOutput gate_step(const GateStepInput& in, const GateParams& p);

bool well_formed(const msg::ActuationCommand& c);
bool well_formed(const msg::OperatorInput& o);

class VehicleGate {
 public:
  explicit VehicleGate(GateParams p = {}, SimTime start = SimTime{0});

  // Malformed commands are treated as absent and do not refresh the timeout.
  bool on_autonomy(const msg::ActuationCommand& cmd, SimTime rx);
  bool on_operator(const msg::OperatorInput& in, SimTime rx);

  void request_hard_emergency(std::string reason);
  // No-op when not latched. Throws NotConfirmed / NotAtStandstill.
  void reset_at_standstill(double speed, bool confirmed, SimTime now);
  // Enabling requires standstill (parameterized); disabling is always allowed.
  void set_manual_mode(bool enable, double speed, SimTime now);

  GateOutput step(SimTime now);

  GateParams& params() { return p_; }
  bool hard_latched() const { return hard_; }
  bool manual_mode() const { return manual_; }
  const std::string& hard_reason() const { return hard_reason_; }

 private:
  GateParams p_;
  SimTime reference_;  // start, reset or manual-mode exit: timeout counts from here without commands
  std::optional<msg::ActuationCommand> autonomy_;
  std::optional<SimTime> autonomy_rx_;
  std::optional<msg::OperatorInput> operator_;
  std::optional<SimTime> operator_rx_;
  bool hard_ = false;
  std::string hard_reason_;
  bool manual_ = false;
  std::uint64_t sequence_ = 0;
};

struct GateTopics {
  std::string autonomy = "/control/actuation";
  std::string output = "/vehicle/actuation";
  std::string state = "/gate/state";
  std::string emergency = "/orchestration/emergency";
  std::string operator_input = "/operator/input";
  std::string operator_command = "/operator/command";
  std::string vehicle_state = "/vehicle/state";
  std::string status = "/diagnostics/status";
};

void declare_parameters(params::ParameterStore& store);
GateParams params_from(const params::ParameterStore& store);

// Independent module with its own 10 ms timer and crash domain.
class GateNode {
 public:
  GateNode(bus::Bus& bus, params::ParameterStore& store, const GateTopics& topics = {},
           std::string module_id = "vehicle_gate");

  const VehicleGate& gate() const { return gate_; }
  const GateOutput& last_output() const { return last_; }
  std::uint64_t rejected_commands() const { return rejected_; }
  double vehicle_speed() const { return speed_; }

 private:
  void cycle(SimTime now);

  bus::Bus* bus_;
  params::ParameterStore* store_;
  VehicleGate gate_;
  GateOutput last_;
  double speed_ = 0.0;
  bus::PublisherHandle out_pub_;
  bus::PublisherHandle state_pub_;
  kit::StatusReporter status_;
  std::uint64_t rejected_ = 0;
};

}  // namespace racestack::gate
