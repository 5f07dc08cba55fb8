#pragma once

// Standardized node: a generic wrapper binds an AlgorithmCore (strategy) to bus
// topics, monitors every input for timeouts, heartbeats a ModuleStatus and
// forwards the core's debug signals to the signal log.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "racestack/bus.hpp"
#include "racestack/messages.hpp"
#include "racestack/params.hpp"
#include "racestack/signal_log.hpp"

namespace racestack::kit {

enum class KitErrc { UnboundTopic, InvalidTimeout, UnknownCore, DuplicateCore, UnknownPort, InvalidWiring };

std::string_view to_string(KitErrc c);

class KitError : public std::runtime_error {
 public:
  KitError(KitErrc code, const std::string& what);
  KitErrc code() const noexcept { return code_; }

 private:
  KitErrc code_;
};

struct PortSample {
  std::shared_ptr<const Message> value;  // latest accepted payload, kept after timeout
  bool fresh = false;
  bool required = false;
  std::optional<SimTime> last_rx;

  template <class T>
  const T* get() const {
    return value ? std::get_if<T>(value.get()) : nullptr;
  }
};

struct CoreInputs {
  SimTime now{0};
  std::optional<std::string> trigger;  // none when the step came from the module timer
  std::map<std::string, PortSample, std::less<>> ports;

  const PortSample& port(std::string_view name) const;
  bool fresh(std::string_view name) const { return port(name).fresh; }
  template <class T>
  const T* get(std::string_view name) const {
    return port(name).template get<T>();
  }
};

struct CoreOutputs {
  std::vector<std::pair<std::string, Message>> publish;  // output port, payload
  // Stale means the core cannot function: the wrapper reports STALE and stops outputs.
  DiagnosticLevel level = DiagnosticLevel::Ok;
  std::string detail;
  std::vector<double> signals;  // aligned with signal_names(); empty = no frame

  void emit(std::string port, Message m) { publish.emplace_back(std::move(port), std::move(m)); }
  static CoreOutputs degraded(DiagnosticLevel level, std::string detail) {
    CoreOutputs o;
    o.level = level;
    o.detail = std::move(detail);
    return o;
  }
};

// Framework-independent algorithm. No bus, clock or file access.
class AlgorithmCore {
 public:
  virtual ~AlgorithmCore() = default;
  virtual std::string_view name() const = 0;
  virtual void declare_parameters(params::ParameterStore&, const params::ParameterView&) {}
  virtual std::vector<std::string> signal_names() const { return {}; }
  // Corrupted-input hook: a message is rejected before it reaches step().
  virtual std::optional<std::string> validate(std::string_view /*port*/, const Message&) const {
    return std::nullopt;
  }
  virtual CoreOutputs step(const CoreInputs& in, const params::ParameterView& params) = 0;
};

struct InputBinding {
  std::string port;
  std::string topic;
  bool required = true;
  std::optional<SimTime> timeout;  // default 3x the topic's nominal period
};

struct OutputBinding {
  std::string port;
  std::string topic;
};

struct ModuleConfig {
  std::string id;
  std::vector<InputBinding> inputs;
  std::vector<OutputBinding> outputs;
  std::optional<SimTime> period;       // timer-driven step
  std::optional<std::string> trigger;  // subscription-triggered step on this input port
  SimTime heartbeat{std::chrono::milliseconds(20)};
  SimTime compute_delay{0};
  std::optional<bus::JitterSpec> jitter;
  std::string status_topic = "/diagnostics/status";
  // Signal log channels; ignored when the topics are not registered.
  std::string schema_topic = "/tsl/schema";
  std::string frame_topic = "/tsl/frames";
};

// Publishes ModuleStatus for nodes that are not wrapped cores.
class StatusReporter {
 public:
  StatusReporter(bus::Bus& bus, std::string module_id, std::string_view topic = "/diagnostics/status");
  void publish(DiagnosticLevel level, std::string detail = {});
  const std::string& module_id() const { return id_; }

 private:
  bus::Bus* bus_;
  std::string id_;
  bus::PublisherHandle pub_;
};

class Module {
 public:
  // wrap(): validates bindings, declares the core's parameters under the module
  // id, installs input monitors, the step trigger and the heartbeat timer.
  Module(bus::Bus& bus, params::ParameterStore& store, ModuleConfig config, std::unique_ptr<AlgorithmCore> core);
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  const std::string& id() const { return cfg_.id; }
  const AlgorithmCore& core() const { return *core_; }
  AlgorithmCore& core() { return *core_; }

  // Publishes the status a heartbeat would publish now. Never throws for input reasons.
  msg::ModuleStatus heartbeat_tick();
  void report_stale(const std::string& detail);

  bool stale() const { return stale_; }
  DiagnosticLevel current_level() const;
  std::string current_detail() const;
  std::uint64_t steps() const { return steps_; }
  const std::map<std::string, double>& last_signals() const { return last_signals_; }

 private:
  struct Input {
    InputBinding binding;
    SimTime timeout{0};
    PortSample sample;
    std::optional<std::string> invalid;  // last rejected payload reason
  };

  void on_input(std::size_t idx, const bus::Envelope& env);
  void run_step(std::optional<std::string> trigger);
  void publish_outputs(std::vector<std::pair<std::string, Message>> out, const std::vector<double>& signals);
  void announce_schema_if_due();
  std::pair<DiagnosticLevel, std::string> monitor_level() const;
  bool input_valid(const Input& in) const;

  bus::Bus* bus_;
  params::ParameterStore* store_;
  ModuleConfig cfg_;
  std::unique_ptr<AlgorithmCore> core_;
  params::ParameterView view_;
  std::vector<Input> inputs_;
  std::map<std::string, bus::PublisherHandle, std::less<>> outputs_;
  bus::PublisherHandle status_pub_;
  std::optional<bus::PublisherHandle> schema_pub_;
  std::optional<bus::PublisherHandle> frame_pub_;
  std::optional<tsl::SignalSchema> schema_;
  std::optional<SimTime> last_announce_;

  DiagnosticLevel core_level_ = DiagnosticLevel::Ok;
  std::string core_detail_;
  bool stale_ = false;
  std::string stale_detail_;
  std::uint64_t steps_ = 0;
  std::map<std::string, double> last_signals_;
};

using CoreFactory = std::function<std::unique_ptr<AlgorithmCore>()>;

// Name -> factory. Instances are owned by the caller; there is no global registry.
class CoreRegistry {
 public:
  void add(std::string name, CoreFactory factory);
  std::unique_ptr<AlgorithmCore> create(std::string_view name) const;
  bool contains(std::string_view name) const { return factories_.find(name) != factories_.end(); }
  std::vector<std::string> names() const;

 private:
  std::map<std::string, CoreFactory, std::less<>> factories_;
};

struct ModuleSpec {
  ModuleConfig config;
  std::string core;
};

// Module wiring document: {"modules": [{"id", "core", "inputs": [{"port", "topic",
// "required", "timeout_ms"}], "outputs": [{"port", "topic"}], "period_ms" | "trigger",
// "heartbeat_ms", "compute_delay_ms", "jitter_sigma_ms"}]}.
std::vector<ModuleSpec> parse_wiring(const nlohmann::json& doc);
nlohmann::json wiring_to_json(const std::vector<ModuleSpec>& specs);

}  // namespace racestack::kit
