#include "racestack/sim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "racestack/orchestration.hpp"
#include "racestack/signal_log.hpp"
#include "racestack/sim/cores.hpp"
#include "racestack/sim/vehicle.hpp"
#include "racestack/vehicle_gate.hpp"

namespace racestack::sim {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr SimTime kOperatorRepeat = std::chrono::milliseconds(50);  // 20 Hz operator stream
constexpr std::string_view kStatusTopic = "/diagnostics/status";

[[noreturn]] void invalid(const std::string& what) { throw SimError(SimErrc::ScenarioInvalid, what); }

SimTime ms_of(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key) || !j.at(key).is_number()) invalid(ctx + ": '" + key + "' must be a number");
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v) || v < 0) invalid(ctx + ": '" + key + "' must be finite and non-negative");
  return from_ms(v);
}

std::optional<SimTime> opt_ms(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key)) return std::nullopt;
  return ms_of(j, key, ctx);
}

bus::TopicSpec topic(std::string name, MessageType type, std::optional<double> period_ms, std::size_t depth = 1) {
  bus::TopicSpec t;
  t.name = std::move(name);
  t.type = type;
  if (period_ms) t.nominal_period = from_ms(*period_ms);
  t.queue_depth = depth;
  return t;
}

std::vector<bus::TopicSpec> base_topics() {
  return {topic(std::string(kStatusTopic), MessageType::ModuleStatus, std::nullopt, 16),
          topic("/tsl/schema", MessageType::SignalSchema, std::nullopt, 128),
          topic("/tsl/frames", MessageType::SignalFrame, std::nullopt, 128)};
}

// --- predicate helpers ------------------------------------------------------

const ojson* lookup_path(const ojson& root, std::string_view path) {
  const ojson* cur = &root;
  while (!path.empty()) {
    const auto dot = path.find('.');
    const std::string key(path.substr(0, dot));
    if (!cur->is_object() || !cur->contains(key)) return nullptr;
    cur = &(*cur)[key];
    path = dot == std::string_view::npos ? std::string_view{} : path.substr(dot + 1);
  }
  return cur;
}

bool equal(const ojson& actual, const json& expected) {
  if (actual.is_number() && expected.is_number()) return actual.get<double>() == expected.get<double>();
  if (actual.is_string() && expected.is_string()) return actual.get<std::string>() == expected.get<std::string>();
  if (actual.is_boolean() && expected.is_boolean()) return actual.get<bool>() == expected.get<bool>();
  if (actual.is_null() && expected.is_null()) return true;
  return false;
}

const std::set<std::string>& operators() {
  static const std::set<std::string> ops{"lt", "le", "gt", "ge", "eq", "ne"};
  return ops;
}

bool compare(double a, const std::string& op, double b) {
  if (op == "lt") return a < b;
  if (op == "le") return a <= b;
  if (op == "gt") return a > b;
  if (op == "ge") return a >= b;
  if (op == "eq") return a == b;
  return a != b;
}

bool test(const ojson& actual, const json& cond) {
  if (!cond.is_object()) return equal(actual, cond);
  for (const auto& [op, v] : cond.items()) {
    if (op == "eq" || op == "ne") {
      if (equal(actual, v) != (op == "eq")) return false;
      continue;
    }
    if (!actual.is_number() || !v.is_number()) return false;
    if (!compare(actual.get<double>(), op, v.get<double>())) return false;
  }
  return true;
}

Predicate parse_predicate(const json& j, const std::string& ctx) {
  Predicate p;
  if (!j.contains("topic") || !j.at("topic").is_string()) invalid(ctx + ": 'topic' must be a string");
  p.topic = j.at("topic").get<std::string>();
  if (j.contains("where")) {
    if (!j.at("where").is_object()) invalid(ctx + ": 'where' must be an object");
    p.where = j.at("where");
    for (const auto& [path, cond] : p.where.items()) {
      if (!cond.is_object()) continue;
      if (cond.empty()) invalid(ctx + ": empty condition for " + path);
      for (const auto& [op, v] : cond.items()) {
        if (!operators().contains(op)) invalid(ctx + ": unknown operator '" + op + "'");
        if (op != "eq" && op != "ne" && !v.is_number()) invalid(ctx + ": '" + op + "' needs a number");
      }
    }
  }
  return p;
}

Assertion parse_assertion(const json& j, std::size_t index) {
  if (!j.is_object()) invalid("assertion " + std::to_string(index) + " must be an object");
  Assertion a;
  a.name = j.value("name", "assertion " + std::to_string(index));
  const std::string ctx = "assertion '" + a.name + "'";
  if (j.contains("signal")) {
    a.kind = Assertion::Kind::Signal;
    if (!j.at("signal").is_string()) invalid(ctx + ": 'signal' must be \"module.name\"");
    a.signal = j.at("signal").get<std::string>();
    if (a.signal.find('.') == std::string::npos) invalid(ctx + ": 'signal' must be \"module.name\"");
    a.op = j.value("op", "eq");
    if (!operators().contains(a.op)) invalid(ctx + ": unknown operator '" + a.op + "'");
    if (!j.contains("value") || !j.at("value").is_number()) invalid(ctx + ": 'value' must be a number");
    a.value = j.at("value").get<double>();
    return a;
  }
  a.predicate = parse_predicate(j, ctx);
  if (j.contains("within_ms")) {
    const auto& w = j.at("within_ms");
    if (!w.is_array() || w.size() != 2 || !w[0].is_number() || !w[1].is_number())
      invalid(ctx + ": 'within_ms' must be [lo, hi]");
    a.lo = from_ms(w[0].get<double>());
    a.hi = from_ms(w[1].get<double>());
    if (*a.hi < a.lo) invalid(ctx + ": empty window");
  }
  if (j.value("never", false)) {
    a.kind = Assertion::Kind::Never;
    return a;
  }
  if (j.contains("after")) {
    a.kind = Assertion::Kind::After;
    a.reference = parse_predicate(j.at("after"), ctx + " reference");
    a.max_delay = ms_of(j.at("after"), "max_delay_ms", ctx);
    return a;
  }
  a.kind = Assertion::Kind::Within;
  a.expect_at = opt_ms(j, "expect_at_ms", ctx);
  return a;
}

bus::FaultSpec parse_fault(const json& j) {
  if (!j.is_object()) invalid("fault must be an object");
  bus::FaultSpec f;
  const std::string kind = j.value("kind", "");
  auto k = bus::parse_fault_kind(kind);
  if (!k) invalid("unknown fault kind '" + kind + "'");
  f.kind = *k;
  if (!j.contains("target") || !j.at("target").is_string()) invalid("fault target must be a string");
  f.target = j.at("target").get<std::string>();
  const std::string ctx = "fault " + kind + " " + f.target;
  f.activation = ms_of(j, "at_ms", ctx);
  if (auto d = opt_ms(j, "delay_ms", ctx)) f.delay = *d;
  f.duration = opt_ms(j, "duration_ms", ctx);
  if (f.kind == bus::FaultSpec::Kind::FreezeModule && !f.duration) invalid(ctx + ": freeze needs duration_ms");
  return f;
}

bus::TopicSpec parse_topic(const json& j) {
  if (!j.is_object() || !j.contains("name") || !j.at("name").is_string()) invalid("topic needs a name");
  const std::string name = j.at("name").get<std::string>();
  auto type = parse_message_type(j.value("type", ""));
  if (!type) invalid("topic " + name + ": unknown message type");
  std::optional<double> period;
  if (j.contains("period_ms")) period = static_cast<double>(to_ms(ms_of(j, "period_ms", "topic " + name)));
  const auto depth = j.value("depth", 1);
  if (depth < 1) invalid("topic " + name + ": depth must be positive");
  return topic(name, *type, period, static_cast<std::size_t>(depth));
}

const json& field(const json& cmd, const char* key) {
  if (!cmd.contains(key)) throw SimError(SimErrc::ProtocolViolation, std::string("missing '") + key + "'");
  return cmd.at(key);
}

double number(const json& cmd, const char* key, double fallback) {
  if (!cmd.contains(key)) return fallback;
  const auto& v = cmd.at(key);
  if (!v.is_number() || !std::isfinite(v.get<double>()))
    throw SimError(SimErrc::ProtocolViolation, std::string("'") + key + "' must be a finite number");
  return v.get<double>();
}

bool boolean(const json& cmd, const char* key, bool fallback) {
  if (!cmd.contains(key)) return fallback;
  if (!cmd.at(key).is_boolean()) throw SimError(SimErrc::ProtocolViolation, std::string("'") + key + "' must be a bool");
  return cmd.at(key).get<bool>();
}

std::int32_t flag_code(const json& v) {
  if (v.is_number_integer()) return v.get<std::int32_t>();
  if (v.is_string()) {
    if (auto f = parse_flag(v.get<std::string>())) return static_cast<std::int32_t>(*f);
  }
  throw SimError(SimErrc::ProtocolViolation, "unknown flag " + v.dump());
}

}  // namespace

bool Predicate::matches(const Message& m) const {
  if (where.empty()) return true;
  const ojson doc = to_json(m);
  for (const auto& [path, cond] : where.items()) {
    const ojson* v = lookup_path(doc, path);
    if (!v || !test(*v, cond)) return false;
  }
  return true;
}

void validate_command(const json& cmd) {
  if (!cmd.is_object()) throw SimError(SimErrc::ProtocolViolation, "command must be an object");
  const auto& c = field(cmd, "cmd");
  if (!c.is_string()) throw SimError(SimErrc::ProtocolViolation, "'cmd' must be a string");
  const std::string name = c.get<std::string>();
  if (name == "behavior") {
    const auto& v = field(cmd, "value");
    if (!v.is_string() || !parse_behavior(v.get<std::string>()))
      throw SimError(SimErrc::ProtocolViolation, "unknown behavior " + v.dump());
  } else if (name == "flag") {
    flag_code(field(cmd, "value"));
  } else if (name == "operator") {
    for (const char* k : {"throttle", "brake", "steering"}) number(cmd, k, 0.0);
    boolean(cmd, "override", false);
    if (number(cmd, "for_ms", 0.0) < 0) throw SimError(SimErrc::ProtocolViolation, "'for_ms' must be >= 0");
  } else if (name == "reset") {
    boolean(cmd, "confirmed", false);
  } else if (name == "manual_mode") {
    boolean(cmd, "enable", false);
  } else if (name == "lateral_offset") {
    field(cmd, "value");
    number(cmd, "value", 0.0);
    if (number(cmd, "ramp_ms", 0.0) < 0) throw SimError(SimErrc::ProtocolViolation, "'ramp_ms' must be >= 0");
  } else {
    throw SimError(SimErrc::ProtocolViolation, "unknown command '" + name + "'");
  }
}

std::vector<bus::TopicSpec> default_topics() {
  auto t = base_topics();
  const std::vector<bus::TopicSpec> stack = {
      topic("/vehicle/state", MessageType::VehicleState, 2),
      topic("/sensors/imu", MessageType::ImuSample, 4),
      topic("/localization/odometry", MessageType::Odometry, 10),
      topic("/planning/trajectory", MessageType::TrajectorySet, 50),
      topic("/control/actuation", MessageType::ActuationCommand, 10),
      topic("/vehicle/actuation", MessageType::ActuationCommand, 10),
      topic("/gate/state", MessageType::GateState, 10),
      topic("/orchestration/software_state", MessageType::SoftwareStateReport, 20),
      topic("/orchestration/safety_action", MessageType::SafetyAction, 20),
      topic("/orchestration/emergency", MessageType::EmergencyInstruction, std::nullopt),
      topic("/orchestration/conditions", MessageType::DrivingConditions, 10),
      topic("/behavior/team", MessageType::BehaviorRequest, std::nullopt),
      topic("/behavior/race_control", MessageType::BehaviorRequest, std::nullopt),
      topic("/race_control/flag", MessageType::RaceFlag, std::nullopt),
      topic("/operator/input", MessageType::OperatorInput, std::nullopt),
      topic("/operator/command", MessageType::OperatorCommand, std::nullopt),
      topic("/basestation/heartbeat", MessageType::Sample, 100),
  };
  t.insert(t.end(), stack.begin(), stack.end());
  return t;
}

std::vector<kit::ModuleSpec> default_wiring() {
  static const char* doc = R"({"modules": [
    {"id": "imu_driver", "core": "imu.sim", "period_ms": 4,
     "inputs": [{"port": "truth", "topic": "/vehicle/state"}],
     "outputs": [{"port": "imu", "topic": "/sensors/imu"}]},
    {"id": "state_estimation", "core": "state_estimation.passthrough", "period_ms": 10,
     "inputs": [{"port": "imu", "topic": "/sensors/imu", "timeout_ms": 12}],
     "outputs": [{"port": "odometry", "topic": "/localization/odometry"}]},
    {"id": "planner", "core": "planner.profile", "period_ms": 50,
     "inputs": [{"port": "odometry", "topic": "/localization/odometry"},
                {"port": "action", "topic": "/orchestration/safety_action", "required": false}],
     "outputs": [{"port": "trajectory", "topic": "/planning/trajectory"}]},
    {"id": "control", "core": "controller.proportional", "trigger": "odometry",
     "inputs": [{"port": "odometry", "topic": "/localization/odometry"},
                {"port": "trajectory", "topic": "/planning/trajectory", "required": false, "timeout_ms": 150},
                {"port": "action", "topic": "/orchestration/safety_action", "required": false}],
     "outputs": [{"port": "actuation", "topic": "/control/actuation"}]},
    {"id": "conditions_monitor", "core": "conditions.monitor", "period_ms": 10,
     "inputs": [{"port": "vehicle", "topic": "/vehicle/state"},
                {"port": "odometry", "topic": "/localization/odometry", "required": false},
                {"port": "trajectory", "topic": "/planning/trajectory", "required": false, "timeout_ms": 150},
                {"port": "heartbeat", "topic": "/basestation/heartbeat", "required": false}],
     "outputs": [{"port": "conditions", "topic": "/orchestration/conditions"}]}
  ]})";
  return kit::parse_wiring(json::parse(doc));
}

std::vector<std::string> watched_modules(const ScenarioSpec& spec) {
  std::vector<std::string> ids;
  for (const auto& m : spec.modules) ids.push_back(m.config.id);
  if (spec.record) ids.push_back("telemetry_recorder");
  if (spec.stack) ids.push_back("vehicle_gate");
  return ids;
}

ScenarioSpec parse_scenario(const json& doc) {
  if (!doc.is_object()) invalid("scenario must be a JSON object");
  ScenarioSpec s;
  s.name = doc.value("name", "unnamed");
  s.description = doc.value("description", "");
  s.duration = ms_of(doc, "duration_ms", "scenario");
  if (s.duration.count() <= 0) invalid("duration_ms must be positive");
  if (doc.contains("seed")) {
    if (!doc.at("seed").is_number_unsigned()) invalid("seed must be a non-negative integer");
    s.seed = doc.at("seed").get<std::uint64_t>();
  }
  if (doc.contains("initial_speed")) {
    if (!doc.at("initial_speed").is_number() || doc.at("initial_speed").get<double>() < 0)
      invalid("initial_speed must be a non-negative number");
    s.initial_speed = doc.at("initial_speed").get<double>();
  }
  s.record = doc.value("record", true);

  const json wiring = doc.value("wiring", json("default"));
  try {
    if (wiring.is_string()) {
      if (wiring.get<std::string>() != "default") invalid("unknown wiring '" + wiring.get<std::string>() + "'");
      s.modules = default_wiring();
    } else if (wiring.is_object()) {
      s.stack = wiring.value("stack", true);
      if (wiring.contains("topics")) {
        for (const auto& t : wiring.at("topics")) s.topics.push_back(parse_topic(t));
      }
      if (wiring.contains("modules"))
        s.modules = kit::parse_wiring(json{{"modules", wiring.at("modules")}});
      else if (s.stack)
        s.modules = default_wiring();
    } else {
      invalid("wiring must be \"default\" or an object");
    }
  } catch (const kit::KitError& e) {
    invalid(e.what());
  }

  if (doc.contains("params")) {
    if (!doc.at("params").is_object()) invalid("params must be an object");
    s.params = doc.at("params");
  }
  for (const auto& f : doc.value("faults", json::array())) {
    s.faults.push_back(parse_fault(f));
    if (s.faults.back().activation > s.duration) invalid("fault after the scenario end");
  }
  for (const auto& e : doc.value("script", json::array())) {
    if (!e.is_object()) invalid("script entries must be objects");
    ScriptEvent ev;
    ev.at = ms_of(e, "at_ms", "script entry");
    if (ev.at > s.duration) invalid("script entry after the scenario end");
    ev.command = e;
    ev.command.erase("at_ms");
    try {
      validate_command(ev.command);
    } catch (const SimError& err) {
      invalid(std::string("script: ") + err.what());
    }
    s.script.push_back(std::move(ev));
  }
  std::size_t i = 0;
  for (const auto& a : doc.value("assertions", json::array())) s.assertions.push_back(parse_assertion(a, i++));
  if (doc.contains("analysis")) {
    const auto& a = doc.at("analysis");
    Analysis an;
    if (!a.contains("chain") || !a.at("chain").is_array() || a.at("chain").empty())
      invalid("analysis.chain must be a non-empty array");
    for (const auto& t : a.at("chain")) {
      if (!t.is_string()) invalid("analysis.chain entries must be strings");
      an.chain.push_back(t.get<std::string>());
    }
    an.period = ms_of(a, "period_ms", "analysis");
    s.analysis = std::move(an);
  }
  return s;
}

ScenarioSpec load_scenario(std::string_view name_or_path) {
  std::string text;
  if (auto bundled = bundled_scenario_text(name_or_path)) {
    text = std::string(*bundled);
  } else {
    std::ifstream in{std::filesystem::path(name_or_path)};
    if (!in) invalid("no bundled scenario or file named '" + std::string(name_or_path) + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    invalid(std::string(name_or_path) + ": " + e.what());
  }
  return parse_scenario(doc);
}

// --- result ------------------------------------------------------------------

std::optional<SimTime> ScenarioResult::first_match(const Predicate& pred, SimTime from) const {
  auto it = observations.find(pred.topic);
  if (it == observations.end()) return std::nullopt;
  for (const auto& o : it->second) {
    if (o.stamp >= from && pred.matches(*o.payload)) return o.stamp;
  }
  return std::nullopt;
}

ojson ScenarioResult::summary() const {
  ojson a = ojson::array();
  for (const auto& o : assertions) {
    ojson e{{"name", o.name}, {"passed", o.passed}};
    e["observed_ms"] = o.observed ? ojson(to_ms(*o.observed)) : ojson(nullptr);
    e["detail"] = o.detail;
    a.push_back(std::move(e));
  }
  ojson actions = ojson::object();
  for (const auto& [k, t] : first_action) actions[std::string(to_string(k))] = to_ms(t);
  ojson panic_list = ojson::array();
  for (const auto& p : panics) panic_list.push_back({{"t_ms", to_ms(p.t)}, {"module", p.module}, {"what", p.what}});
  ojson out{{"scenario", scenario},
            {"seed", seed},
            {"passed", passed},
            {"events", events},
            {"assertions", std::move(a)},
            {"first_action_ms", std::move(actions)},
            {"standstill_ms", standstill_at ? ojson(to_ms(*standstill_at)) : ojson(nullptr)},
            {"final_state", to_json(Message{final_state})},
            {"controller_rejections", controller_rejections},
            {"panics", std::move(panic_list)}};
  if (latency) out["latency"] = latency->to_json();
  return out;
}

// --- session -------------------------------------------------------------------

struct Session::Impl {
  ScenarioSpec spec;
  SessionOptions opts;
  bus::Bus bus;
  params::ParameterStore store;
  std::ostringstream trace;
  std::unique_ptr<tsl::LogWriter> writer;
  std::unique_ptr<tsl::Recorder> recorder;
  std::unique_ptr<VehiclePlant> plant;
  std::vector<std::unique_ptr<kit::Module>> modules;
  std::unique_ptr<orch::RaceControlNode> race_control;
  std::unique_ptr<orch::WatchdogNode> watchdog;
  std::unique_ptr<orch::SafetyNode> safety;
  std::unique_ptr<gate::GateNode> gate;
  std::unique_ptr<LatencyProbe> latency;
  std::map<std::string, bus::PublisherHandle, std::less<>> basestation;  // topic -> handle
  std::map<std::string, std::vector<Observation>> observations;
  std::uint64_t events = 0;

  Impl(ScenarioSpec s, SessionOptions o) : spec(std::move(s)), opts(std::move(o)), bus(opts.seed.value_or(spec.seed)) {}

  void build();
  void publish(std::string_view topic, Message m);
  void apply(const json& cmd);
};

void Session::Impl::build() {
  if (opts.trace) bus.set_trace(&trace);

  auto topics = spec.stack ? default_topics() : base_topics();
  for (const auto& t : spec.topics) {
    auto same = std::find_if(topics.begin(), topics.end(), [&](const bus::TopicSpec& x) { return x.name == t.name; });
    if (same != topics.end())
      *same = t;
    else
      topics.push_back(t);
  }
  for (auto& t : topics) bus.register_topic(t);

  // Every parameter is declared before overrides so override validation sees the full set.
  const auto registry = default_core_registry();
  std::vector<std::unique_ptr<kit::AlgorithmCore>> cores;
  try {
    for (const auto& m : spec.modules) {
      cores.push_back(registry.create(m.core));
      cores.back()->declare_parameters(store, params::ParameterView(store, m.config.id));
    }
  } catch (const kit::KitError& e) {
    invalid(e.what());
  }
  if (spec.stack) {
    orch::declare_parameters(store);
    gate::declare_parameters(store);
    declare_vehicle_parameters(store);
  }
  std::vector<std::string> docs;
  if (!spec.params.empty()) docs.push_back(spec.params.dump());
  docs.insert(docs.end(), opts.param_documents.begin(), opts.param_documents.end());
  if (!docs.empty()) store.apply_overrides(docs);

  if (spec.record) {
    writer = opts.log_path ? std::make_unique<tsl::LogWriter>(*opts.log_path) : std::make_unique<tsl::LogWriter>();
    std::vector<std::string> all;
    for (const auto& t : bus.topics()) all.push_back(t.name);
    tsl::Recorder::Options ro;
    ro.status_topic = std::string(kStatusTopic);
    recorder = std::make_unique<tsl::Recorder>(bus, *writer, all, ro);
  }
  if (spec.stack) plant = std::make_unique<VehiclePlant>(bus, store, spec.initial_speed);

  try {
    for (std::size_t i = 0; i < spec.modules.size(); ++i)
      modules.push_back(std::make_unique<kit::Module>(bus, store, spec.modules[i].config, std::move(cores[i])));
  } catch (const kit::KitError& e) {
    invalid(e.what());
  }

  if (spec.stack) {
    for (const char* t : {"/behavior/team", "/operator/input", "/operator/command", "/basestation/heartbeat"})
      basestation.emplace(t, bus.advertise(bus.topic(t), "basestation"));
    basestation.emplace("/race_control/flag", bus.advertise(bus.topic("/race_control/flag"), "race_control_feed"));
    bus.schedule_timer(
        std::chrono::milliseconds(100),
        [this, n = 0.0](SimTime) mutable { bus.publish(basestation.at("/basestation/heartbeat"), msg::Sample{n++}); },
        "basestation");

    race_control = std::make_unique<orch::RaceControlNode>(bus);
    orch::StateMachineConfig defaults;
    std::vector<orch::WatchedModule> watched;
    for (const auto& id : watched_modules(spec)) watched.push_back({id, defaults.critical.contains(id)});
    watchdog = std::make_unique<orch::WatchdogNode>(bus, store, std::move(watched));
    safety = std::make_unique<orch::SafetyNode>(bus, store, defaults.critical);
    gate = std::make_unique<gate::GateNode>(bus, store);
  }

  if (spec.analysis) {
    for (const auto& t : spec.analysis->chain) {
      if (!bus.find_topic(t)) invalid("analysis topic " + t + " is not registered");
    }
    latency = std::make_unique<LatencyProbe>(bus, spec.analysis->chain, spec.analysis->period);
  }

  std::set<std::string> probe_topics;
  for (const auto& a : spec.assertions) {
    if (a.kind == Assertion::Kind::Signal) {
      const auto module_id = a.signal.substr(0, a.signal.find('.'));
      if (std::none_of(modules.begin(), modules.end(), [&](const auto& m) { return m->id() == module_id; }))
        invalid("assertion '" + a.name + "' references unknown module " + module_id);
      continue;
    }
    for (const auto* p : {&a.predicate, &a.reference}) {
      if (p->topic.empty()) continue;
      if (!bus.find_topic(p->topic)) invalid("assertion '" + a.name + "' references unknown topic " + p->topic);
      probe_topics.insert(p->topic);
    }
  }
  if (spec.stack) {
    for (const char* t : {"/vehicle/state", "/orchestration/safety_action"}) probe_topics.insert(t);
  }
  for (const auto& t : probe_topics) {
    bus.subscribe(
        bus.topic(t),
        [this](const bus::Envelope& env) {
          observations[env.topic].push_back({env.publish_stamp, env.publisher_id, env.payload});
        },
        "probe", 128);
  }

  for (const auto& f : spec.faults) {
    try {
      bus.inject_fault(f);
    } catch (const bus::BusError& e) {
      invalid(e.what());
    }
  }
  if (!spec.script.empty() && !spec.stack) {
    for (const auto& ev : spec.script) {
      if (ev.command.at("cmd") != "lateral_offset") invalid("script commands need the default stack");
    }
  }
  for (const auto& ev : spec.script) {
    const json& cmd = ev.command;
    if (cmd.at("cmd") == "operator" && number(cmd, "for_ms", 0.0) > 0) {
      const SimTime end = ev.at + from_ms(number(cmd, "for_ms", 0.0));
      for (SimTime t = ev.at; t < end; t += kOperatorRepeat)
        bus.schedule_at(t, [this, cmd](SimTime) { apply(cmd); }, "scenario");
      json release = cmd;
      release["override"] = false;
      release["brake"] = 0.0;
      release["throttle"] = 0.0;
      bus.schedule_at(end, [this, release](SimTime) { apply(release); }, "scenario");
    } else {
      bus.schedule_at(ev.at, [this, cmd](SimTime) { apply(cmd); }, "scenario");
    }
  }
}

void Session::Impl::publish(std::string_view topic, Message m) {
  auto it = basestation.find(topic);
  if (it == basestation.end()) throw SimError(SimErrc::ProtocolViolation, "no stack to receive " + std::string(topic));
  bus.publish(it->second, std::move(m));
}

void Session::Impl::apply(const json& cmd) {
  validate_command(cmd);
  const std::string name = cmd.at("cmd").get<std::string>();
  if (name == "behavior") {
    publish("/behavior/team",
            msg::BehaviorRequest{*parse_behavior(cmd.at("value").get<std::string>()), BehaviorSource::Team});
  } else if (name == "flag") {
    publish("/race_control/flag", msg::RaceFlag{flag_code(cmd.at("value"))});
  } else if (name == "operator") {
    publish("/operator/input", msg::OperatorInput{number(cmd, "throttle", 0.0), number(cmd, "brake", 0.0),
                                                  number(cmd, "steering", 0.0), boolean(cmd, "override", false),
                                                  bus.now()});
  } else if (name == "reset") {
    publish("/operator/command", msg::OperatorCommand{msg::OperatorCommand::Kind::ResetHardEmergency, false,
                                                      boolean(cmd, "confirmed", false)});
  } else if (name == "manual_mode") {
    publish("/operator/command",
            msg::OperatorCommand{msg::OperatorCommand::Kind::ManualMode, boolean(cmd, "enable", false), false});
  } else if (name == "lateral_offset") {
    if (!plant) throw SimError(SimErrc::ProtocolViolation, "no vehicle plant");
    plant->set_lateral_offset(number(cmd, "value", 0.0), from_ms(number(cmd, "ramp_ms", 0.0)));
  }
}

Session::Session(ScenarioSpec spec, SessionOptions opts)
    : impl_(std::make_unique<Impl>(std::move(spec), std::move(opts))) {
  impl_->build();
}

Session::~Session() = default;

bus::Bus& Session::bus() { return impl_->bus; }
params::ParameterStore& Session::params() { return impl_->store; }
const ScenarioSpec& Session::spec() const { return impl_->spec; }
const VehiclePlant* Session::plant() const { return impl_->plant.get(); }
const gate::GateNode* Session::gate() const { return impl_->gate.get(); }
const orch::SafetyNode* Session::safety() const { return impl_->safety.get(); }

const kit::Module* Session::module(std::string_view id) const {
  for (const auto& m : impl_->modules) {
    if (m->id() == id) return m.get();
  }
  return nullptr;
}

void Session::run() { run_until(impl_->spec.duration); }

void Session::run_until(SimTime t) { impl_->events += impl_->bus.run_until(t); }

void Session::apply_command(const json& cmd) { impl_->apply(cmd); }

ScenarioResult Session::finish() {
  auto& m = *impl_;
  ScenarioResult r;
  r.scenario = m.spec.name;
  r.seed = m.bus.seed();
  r.events = m.events;
  r.trace = m.trace.str();
  if (m.writer) {
    m.writer->flush();
    r.log = m.writer->bytes();
  }
  r.panics = m.bus.panics();
  for (const auto& mod : m.modules) {
    if (!mod->last_signals().empty()) r.signals[mod->id()] = mod->last_signals();
    if (const auto* c = dynamic_cast<const ControllerCore*>(&mod->core())) r.controller_rejections += c->rejected();
  }
  if (m.plant) r.final_state = m.plant->state();
  r.observations = m.observations;

  if (auto it = r.observations.find("/orchestration/safety_action"); it != r.observations.end()) {
    for (const auto& o : it->second) {
      if (const auto* a = std::get_if<msg::SafetyAction>(o.payload.get())) r.first_action.emplace(a->action, o.stamp);
    }
  }
  if (auto it = r.observations.find("/vehicle/state"); it != r.observations.end()) {
    for (const auto& o : it->second) {
      const auto* v = std::get_if<msg::VehicleState>(o.payload.get());
      if (v && v->speed < kStandstillSpeed) {
        r.standstill_at = o.stamp;
        break;
      }
    }
  }

  bool ok = true;
  for (const auto& a : m.spec.assertions) {
    AssertionOutcome out;
    out.name = a.name;
    switch (a.kind) {
      case Assertion::Kind::Within: {
        out.observed = r.first_match(a.predicate, a.lo);
        out.passed = out.observed && (!a.hi || *out.observed <= *a.hi) && (!a.expect_at || *out.observed == *a.expect_at);
        if (!out.observed)
          out.detail = "no match on " + a.predicate.topic;
        else if (a.expect_at && *out.observed != *a.expect_at)
          out.detail = "expected at " + std::to_string(to_ms(*a.expect_at)) + " ms";
        else if (a.hi && *out.observed > *a.hi)
          out.detail = "after window end " + std::to_string(to_ms(*a.hi)) + " ms";
        break;
      }
      case Assertion::Kind::After: {
        auto ref = r.first_match(a.reference);
        if (!ref) {
          out.detail = "reference never matched on " + a.reference.topic;
          break;
        }
        out.observed = r.first_match(a.predicate, *ref);
        if (!out.observed) {
          out.detail = "no match after reference at " + std::to_string(to_ms(*ref)) + " ms";
          break;
        }
        const SimTime delay = *out.observed - *ref;
        out.passed = delay <= a.max_delay;
        out.detail = "delay " + std::to_string(to_ms(delay)) + " ms";
        break;
      }
      case Assertion::Kind::Never: {
        out.observed = r.first_match(a.predicate, a.lo);
        if (out.observed && a.hi && *out.observed > *a.hi) out.observed.reset();
        out.passed = !out.observed;
        if (!out.passed) out.detail = "unexpected match";
        break;
      }
      case Assertion::Kind::Signal: {
        const auto dot = a.signal.find('.');
        const auto module_id = a.signal.substr(0, dot);
        const auto sig = a.signal.substr(dot + 1);
        auto mit = r.signals.find(module_id);
        if (mit == r.signals.end() || !mit->second.contains(sig)) {
          out.detail = "signal never logged";
          break;
        }
        const double v = mit->second.at(sig);
        out.passed = compare(v, a.op, a.value);
        out.detail = "final value " + std::to_string(v);
        break;
      }
    }
    ok = ok && out.passed;
    r.assertions.push_back(std::move(out));
  }
  if (m.latency) {
    try {
      r.latency = m.latency->report();
    } catch (const SimError& e) {
      ok = false;
      r.assertions.push_back({"latency analysis", false, std::nullopt, e.what()});
    }
  }
  r.passed = ok;
  return r;
}

ScenarioResult run_scenario(const ScenarioSpec& spec, SessionOptions opts) {
  Session s(spec, std::move(opts));
  s.run();
  return s.finish();
}

}  // namespace racestack::sim
