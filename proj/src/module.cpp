#include "racestack/module.hpp"

#include <algorithm>
#include <cmath>

namespace racestack::kit {

std::string_view to_string(KitErrc c) {
  switch (c) {
    case KitErrc::UnboundTopic: return "UnboundTopic";
    case KitErrc::InvalidTimeout: return "InvalidTimeout";
    case KitErrc::UnknownCore: return "UnknownCore";
    case KitErrc::DuplicateCore: return "DuplicateCore";
    case KitErrc::UnknownPort: return "UnknownPort";
    case KitErrc::InvalidWiring: return "InvalidWiring";
  }
  return "?";
}

KitError::KitError(KitErrc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

const PortSample& CoreInputs::port(std::string_view name) const {
  auto it = ports.find(name);
  if (it == ports.end()) throw KitError(KitErrc::UnknownPort, std::string(name));
  return it->second;
}

StatusReporter::StatusReporter(bus::Bus& bus, std::string module_id, std::string_view topic)
    : bus_(&bus), id_(std::move(module_id)) {
  auto h = bus.find_topic(topic);
  if (!h) throw KitError(KitErrc::UnboundTopic, std::string(topic));
  pub_ = bus.advertise(*h, id_);
}

void StatusReporter::publish(DiagnosticLevel level, std::string detail) {
  bus_->publish(pub_, msg::ModuleStatus{id_, level, std::move(detail), bus_->now()});
}

namespace {

bus::TopicHandle bound_topic(const bus::Bus& bus, const std::string& topic, const std::string& module) {
  auto h = bus.find_topic(topic);
  if (!h) throw KitError(KitErrc::UnboundTopic, module + " -> " + topic);
  return *h;
}

}  // namespace

Module::Module(bus::Bus& bus, params::ParameterStore& store, ModuleConfig config,
               std::unique_ptr<AlgorithmCore> core)
    : bus_(&bus), store_(&store), cfg_(std::move(config)), core_(std::move(core)), view_(store, cfg_.id) {
  if (!core_) throw KitError(KitErrc::UnknownCore, "null core for " + cfg_.id);
  if (cfg_.heartbeat.count() <= 0) throw KitError(KitErrc::InvalidTimeout, cfg_.id + " heartbeat period");
  if (cfg_.compute_delay.count() < 0) throw KitError(KitErrc::InvalidTimeout, cfg_.id + " compute delay");
  if (cfg_.period && cfg_.trigger) throw KitError(KitErrc::InvalidWiring, cfg_.id + " has both period and trigger");

  // Validate everything before touching the bus so a failed wrap leaves no trace.
  std::vector<bus::TopicHandle> in_handles;
  for (const auto& b : cfg_.inputs) {
    auto h = bound_topic(bus, b.topic, cfg_.id);
    SimTime timeout{0};
    if (b.timeout) {
      timeout = *b.timeout;
    } else if (auto p = bus.spec(h).nominal_period) {
      timeout = 3 * *p;
    } else {
      throw KitError(KitErrc::InvalidTimeout, cfg_.id + ": " + b.topic + " is event driven and needs an explicit timeout");
    }
    if (timeout.count() <= 0) throw KitError(KitErrc::InvalidTimeout, cfg_.id + ": " + b.topic);
    Input in;
    in.binding = b;
    in.timeout = timeout;
    in.sample.required = b.required;
    inputs_.push_back(std::move(in));
    in_handles.push_back(h);
  }
  if (cfg_.trigger && std::none_of(cfg_.inputs.begin(), cfg_.inputs.end(),
                                   [&](const InputBinding& b) { return b.port == *cfg_.trigger; })) {
    throw KitError(KitErrc::UnknownPort, cfg_.id + " trigger " + *cfg_.trigger);
  }
  std::vector<std::pair<std::string, bus::TopicHandle>> out_handles;
  for (const auto& o : cfg_.outputs) out_handles.emplace_back(o.port, bound_topic(bus, o.topic, cfg_.id));
  const auto status_h = bound_topic(bus, cfg_.status_topic, cfg_.id);

  core_->declare_parameters(store, view_);
  if (auto names = core_->signal_names(); !names.empty()) {
    schema_ = tsl::register_signals(cfg_.id, std::move(names));
    if (auto h = bus.find_topic(cfg_.schema_topic)) schema_pub_ = bus.advertise(*h, cfg_.id);
    if (auto h = bus.find_topic(cfg_.frame_topic)) frame_pub_ = bus.advertise(*h, cfg_.id);
  }

  for (const auto& [port, h] : out_handles) outputs_.emplace(port, bus.advertise(h, cfg_.id));
  status_pub_ = bus.advertise(status_h, cfg_.id);
  for (std::size_t i = 0; i < in_handles.size(); ++i) {
    bus.subscribe(in_handles[i], [this, i](const bus::Envelope& env) { on_input(i, env); }, cfg_.id);
  }
  if (cfg_.period) {
    bus.schedule_timer(*cfg_.period, [this](SimTime) { run_step(std::nullopt); }, cfg_.id, cfg_.jitter);
  }
  bus.schedule_timer(cfg_.heartbeat, [this](SimTime) { heartbeat_tick(); }, cfg_.id);
}

bool Module::input_valid(const Input& in) const {
  return in.sample.last_rx && bus_->now() - *in.sample.last_rx <= in.timeout;
}

void Module::on_input(std::size_t idx, const bus::Envelope& env) {
  if (stale_) return;
  auto& in = inputs_[idx];
  if (auto why = core_->validate(in.binding.port, *env.payload)) {
    in.invalid = *why;
    return;
  }
  in.invalid.reset();
  in.sample.value = env.payload;
  in.sample.last_rx = bus_->now();
  if (cfg_.trigger && *cfg_.trigger == in.binding.port) run_step(in.binding.port);
}

void Module::run_step(std::optional<std::string> trigger) {
  if (stale_) return;
  CoreInputs ci;
  ci.now = bus_->now();
  ci.trigger = std::move(trigger);
  for (auto& in : inputs_) {
    in.sample.fresh = input_valid(in);
    ci.ports.emplace(in.binding.port, in.sample);
  }
  CoreOutputs out;
  try {
    out = core_->step(ci, view_);
    for (const auto& [port, _] : out.publish) {
      if (!outputs_.contains(port)) throw KitError(KitErrc::UnknownPort, cfg_.id + " output " + port);
    }
    if (schema_ && !out.signals.empty() && out.signals.size() != schema_->names.size()) {
      throw tsl::TslError(tsl::TslErrc::LengthMismatch, cfg_.id + " signals");
    }
  } catch (const std::exception& e) {
    core_level_ = DiagnosticLevel::Error;
    core_detail_ = std::string("core failure: ") + e.what();
    return;
  }
  ++steps_;
  if (out.level == DiagnosticLevel::Stale) {
    publish_outputs(std::move(out.publish), out.signals);
    report_stale(out.detail.empty() ? "core cannot function" : out.detail);
    return;
  }
  core_level_ = out.level;
  core_detail_ = std::move(out.detail);
  publish_outputs(std::move(out.publish), out.signals);
}

void Module::publish_outputs(std::vector<std::pair<std::string, Message>> out, const std::vector<double>& signals) {
  std::optional<tsl::SignalFrame> frame;
  if (schema_ && !signals.empty()) {
    frame = tsl::make_frame(*schema_, signals, bus_->now());
    for (std::size_t i = 0; i < signals.size(); ++i) last_signals_[schema_->names[i]] = frame->values[i];
  }
  auto send = [this, out = std::move(out), frame = std::move(frame)]() mutable {
    if (bus_->is_crashed(cfg_.id)) return;
    for (auto& [port, m] : out) bus_->publish(outputs_.at(port), std::move(m));
    if (frame && frame_pub_) {
      announce_schema_if_due();
      frame->stamp = bus_->now();
      bus_->publish(*frame_pub_, tsl::to_message(*frame));
    }
  };
  if (cfg_.compute_delay.count() == 0) {
    send();
  } else {
    bus_->schedule_at(bus_->now() + cfg_.compute_delay, [send = std::move(send)](SimTime) mutable { send(); }, cfg_.id);
  }
}

void Module::announce_schema_if_due() {
  if (!schema_ || !schema_pub_) return;
  const SimTime now = bus_->now();
  if (last_announce_ && now - *last_announce_ < tsl::kReannouncePeriod) return;
  last_announce_ = now;
  bus_->publish(*schema_pub_, tsl::to_message(*schema_));
}

std::pair<DiagnosticLevel, std::string> Module::monitor_level() const {
  DiagnosticLevel level = DiagnosticLevel::Ok;
  std::string detail;
  for (const auto& in : inputs_) {
    DiagnosticLevel l = DiagnosticLevel::Ok;
    std::string d;
    if (in.invalid) {
      l = DiagnosticLevel::Error;
      d = "malformed input on " + in.binding.topic + ": " + *in.invalid;
    } else if (!input_valid(in)) {
      l = in.binding.required ? DiagnosticLevel::Error : DiagnosticLevel::Warn;
      d = (in.sample.last_rx ? "input timeout: " : "no data yet: ") + in.binding.topic;
    }
    if (l > level) {
      level = l;
      detail = std::move(d);
    }
  }
  return {level, detail};
}

DiagnosticLevel Module::current_level() const {
  if (stale_) return DiagnosticLevel::Stale;
  return std::max(core_level_, monitor_level().first);
}

std::string Module::current_detail() const {
  if (stale_) return stale_detail_;
  auto [mon, mon_detail] = monitor_level();
  if (mon > core_level_) return mon_detail;
  return core_detail_;
}

msg::ModuleStatus Module::heartbeat_tick() {
  msg::ModuleStatus st;
  st.module_id = cfg_.id;
  st.stamp = bus_->now();
  try {
    st.level = current_level();
    st.detail = current_detail();
  } catch (...) {
    st.level = DiagnosticLevel::Error;
    st.detail = "status evaluation failed";
  }
  announce_schema_if_due();
  bus_->publish(status_pub_, st);
  return st;
}

void Module::report_stale(const std::string& detail) {
  if (stale_) return;
  stale_ = true;
  stale_detail_ = detail;
  bus_->publish(status_pub_, msg::ModuleStatus{cfg_.id, DiagnosticLevel::Stale, detail, bus_->now()});
}

// --- registry and wiring -------------------------------------------------------

void CoreRegistry::add(std::string name, CoreFactory factory) {
  if (factories_.contains(name)) throw KitError(KitErrc::DuplicateCore, name);
  factories_.emplace(std::move(name), std::move(factory));
}

std::unique_ptr<AlgorithmCore> CoreRegistry::create(std::string_view name) const {
  auto it = factories_.find(name);
  if (it == factories_.end()) throw KitError(KitErrc::UnknownCore, std::string(name));
  return it->second();
}

std::vector<std::string> CoreRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : factories_) out.push_back(n);
  return out;
}

namespace {

using json = nlohmann::json;

SimTime ms_field(const json& j, const char* key, const std::string& ctx) {
  const auto& v = j.at(key);
  if (!v.is_number()) throw KitError(KitErrc::InvalidWiring, ctx + "." + key + " must be a number");
  const double ms = v.get<double>();
  if (!std::isfinite(ms)) throw KitError(KitErrc::InvalidWiring, ctx + "." + key);
  return from_ms(ms);
}

std::string str_field(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key) || !j.at(key).is_string())
    throw KitError(KitErrc::InvalidWiring, ctx + "." + key + " must be a string");
  return j.at(key).get<std::string>();
}

}  // namespace

std::vector<ModuleSpec> parse_wiring(const json& doc) {
  if (!doc.is_object() || !doc.contains("modules") || !doc.at("modules").is_array())
    throw KitError(KitErrc::InvalidWiring, "expected {\"modules\": [...]}");
  std::vector<ModuleSpec> out;
  for (const auto& m : doc.at("modules")) {
    if (!m.is_object()) throw KitError(KitErrc::InvalidWiring, "module entry must be an object");
    ModuleSpec spec;
    auto& c = spec.config;
    c.id = str_field(m, "id", "module");
    const std::string ctx = "module " + c.id;
    spec.core = str_field(m, "core", ctx);
    if (m.contains("inputs")) {
      for (const auto& i : m.at("inputs")) {
        InputBinding b;
        b.port = str_field(i, "port", ctx);
        b.topic = str_field(i, "topic", ctx);
        b.required = i.value("required", true);
        if (i.contains("timeout_ms")) b.timeout = ms_field(i, "timeout_ms", ctx);
        c.inputs.push_back(std::move(b));
      }
    }
    if (m.contains("outputs")) {
      for (const auto& o : m.at("outputs")) c.outputs.push_back({str_field(o, "port", ctx), str_field(o, "topic", ctx)});
    }
    if (m.contains("period_ms")) c.period = ms_field(m, "period_ms", ctx);
    if (m.contains("trigger")) c.trigger = str_field(m, "trigger", ctx);
    if (!c.period && !c.trigger) throw KitError(KitErrc::InvalidWiring, ctx + " needs period_ms or trigger");
    if (m.contains("heartbeat_ms")) c.heartbeat = ms_field(m, "heartbeat_ms", ctx);
    if (m.contains("compute_delay_ms")) c.compute_delay = ms_field(m, "compute_delay_ms", ctx);
    if (m.contains("jitter_sigma_ms")) {
      auto s = ms_field(m, "jitter_sigma_ms", ctx);
      if (s.count() > 0) c.jitter = bus::JitterSpec{s};
    }
    out.push_back(std::move(spec));
  }
  return out;
}

json wiring_to_json(const std::vector<ModuleSpec>& specs) {
  json mods = json::array();
  for (const auto& s : specs) {
    const auto& c = s.config;
    json m{{"id", c.id}, {"core", s.core}};
    json ins = json::array();
    for (const auto& i : c.inputs) {
      json b{{"port", i.port}, {"topic", i.topic}, {"required", i.required}};
      if (i.timeout) b["timeout_ms"] = to_ms(*i.timeout);
      ins.push_back(std::move(b));
    }
    m["inputs"] = std::move(ins);
    json outs = json::array();
    for (const auto& o : c.outputs) outs.push_back({{"port", o.port}, {"topic", o.topic}});
    m["outputs"] = std::move(outs);
    if (c.period) m["period_ms"] = to_ms(*c.period);
    if (c.trigger) m["trigger"] = *c.trigger;
    m["heartbeat_ms"] = to_ms(c.heartbeat);
    m["compute_delay_ms"] = to_ms(c.compute_delay);
    if (c.jitter) m["jitter_sigma_ms"] = to_ms(c.jitter->sigma);
    mods.push_back(std::move(m));
  }
  return json{{"modules", std::move(mods)}};
}

}  // namespace racestack::kit
