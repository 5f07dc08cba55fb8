#include <doctest.h>

#include "racestack/module.hpp"

using namespace racestack;
using namespace racestack::kit;

namespace {

// Doubles "in" onto "out" and exposes two debug signals.
class Doubler final : public AlgorithmCore {
 public:
  std::string_view name() const override { return "test.doubler"; }
  void declare_parameters(params::ParameterStore& store, const params::ParameterView& view) override {
    store.declare_if_absent({view.qualified("gain"), 2.0});
  }
  std::vector<std::string> signal_names() const override { return {"x", "y"}; }
  std::optional<std::string> validate(std::string_view, const Message& m) const override {
    if (auto s = std::get_if<msg::Sample>(&m); s && s->value < 0) return "negative";
    return std::nullopt;
  }
  CoreOutputs step(const CoreInputs& in, const params::ParameterView& p) override {
    ++calls;
    last_trigger = in.trigger;
    CoreOutputs o;
    if (auto s = in.get<msg::Sample>("in"); s && in.fresh("in")) {
      o.emit("out", msg::Sample{s->value * p.get_double("gain")});
      o.signals = {s->value, s->value * p.get_double("gain")};
    }
    return o;
  }
  int calls = 0;
  std::optional<std::string> last_trigger;
};

class Scripted final : public AlgorithmCore {
 public:
  std::function<CoreOutputs(const CoreInputs&)> fn;
  std::string_view name() const override { return "test.scripted"; }
  CoreOutputs step(const CoreInputs& in, const params::ParameterView&) override { return fn(in); }
};

struct Rig {
  bus::Bus bus;
  params::ParameterStore store;
  bus::PublisherHandle in_pub;
  std::vector<msg::ModuleStatus> statuses;
  std::vector<double> outputs;
  std::vector<SimTime> output_times;

  Rig() {
    bus.register_topic({"/in", MessageType::Sample, 10ms, 1});
    bus.register_topic({"/out", MessageType::Sample, std::nullopt, 1});
    bus.register_topic({"/diagnostics/status", MessageType::ModuleStatus, std::nullopt, 16});
    bus.register_topic({"/tsl/schema", MessageType::SignalSchema, std::nullopt, 8});
    bus.register_topic({"/tsl/frames", MessageType::SignalFrame, std::nullopt, 8});
    in_pub = bus.advertise(bus.topic("/in"), "source");
    bus.subscribe(bus.topic("/diagnostics/status"),
                  [this](const bus::Envelope& e) { statuses.push_back(*e.get<msg::ModuleStatus>()); }, "probe", 16);
    bus.subscribe(bus.topic("/out"), [this](const bus::Envelope& e) {
      outputs.push_back(e.get<msg::Sample>()->value);
      output_times.push_back(bus.now());
    }, "probe");
  }

  ModuleConfig config(bool triggered = true) {
    ModuleConfig c;
    c.id = "doubler";
    c.inputs = {{"in", "/in", true, std::nullopt}};
    c.outputs = {{"out", "/out"}};
    if (triggered)
      c.trigger = "in";
    else
      c.period = 10ms;
    return c;
  }

  void feed_every_10ms(SimTime until, double value = 1.0) {
    bus.schedule_timer(10ms, [this, until, value](SimTime now) {
      if (now <= until) bus.publish(in_pub, msg::Sample{value});
    }, "source");
  }

  std::optional<msg::ModuleStatus> last_status_at(SimTime t) const {
    std::optional<msg::ModuleStatus> s;
    for (const auto& st : statuses)
      if (st.stamp <= t) s = st;
    return s;
  }
};

}  // namespace

TEST_CASE("triggered module steps on each delivery and publishes") {
  Rig rig;
  auto core = std::make_unique<Doubler>();
  auto* raw = core.get();
  Module m(rig.bus, rig.store, rig.config(), std::move(core));
  rig.feed_every_10ms(1s, 3.0);
  rig.bus.run_until(100ms);
  CHECK(raw->calls == 10);
  CHECK(raw->last_trigger == std::optional<std::string>("in"));
  REQUIRE(rig.outputs.size() == 10);
  CHECK(rig.outputs.front() == 6.0);
  CHECK(rig.store.get_double("doubler.gain") == 2.0);
  CHECK(m.last_signals().at("y") == 6.0);
  CHECK(m.current_level() == DiagnosticLevel::Ok);
}

TEST_CASE("parameters are read through the module prefix") {
  Rig rig;
  Module m(rig.bus, rig.store, rig.config(), std::make_unique<Doubler>());
  rig.store.set("doubler.gain", 5.0);
  rig.feed_every_10ms(1s, 1.0);
  rig.bus.run_until(10ms);
  REQUIRE(rig.outputs.size() == 1);
  CHECK(rig.outputs[0] == 5.0);
}

TEST_CASE("heartbeat reports input timeouts") {
  Rig rig;
  Module m(rig.bus, rig.store, rig.config(false), std::make_unique<Doubler>());
  rig.feed_every_10ms(200ms);
  rig.bus.run_until(400ms);
  CHECK(rig.last_status_at(200ms)->level == DiagnosticLevel::Ok);
  // Default timeout is three nominal periods: last sample at 200 ms, stale after 230 ms.
  CHECK(rig.last_status_at(220ms)->level == DiagnosticLevel::Ok);
  CHECK(rig.last_status_at(240ms)->level == DiagnosticLevel::Error);
  CHECK(rig.last_status_at(400ms)->detail == "input timeout: /in");
}

TEST_CASE("optional inputs degrade to WARN") {
  Rig rig;
  auto cfg = rig.config(false);
  cfg.inputs[0].required = false;
  Module m(rig.bus, rig.store, cfg, std::make_unique<Doubler>());
  rig.bus.run_until(40ms);
  CHECK(m.current_level() == DiagnosticLevel::Warn);
  CHECK(m.current_detail() == "no data yet: /in");
}

TEST_CASE("malformed input is rejected before step and raises ERROR") {
  Rig rig;
  auto core = std::make_unique<Doubler>();
  auto* raw = core.get();
  Module m(rig.bus, rig.store, rig.config(), std::move(core));
  rig.bus.schedule_at(5ms, [&](SimTime) { rig.bus.publish(rig.in_pub, msg::Sample{-1.0}); }, "source");
  rig.bus.run_until(20ms);
  CHECK(raw->calls == 0);
  CHECK(m.current_level() == DiagnosticLevel::Error);
  CHECK(m.current_detail().find("negative") != std::string::npos);
}

TEST_CASE("a core reporting Stale latches STALE and publishes it immediately") {
  Rig rig;
  auto core = std::make_unique<Scripted>();
  int steps = 0;
  core->fn = [&](const CoreInputs& in) {
    ++steps;
    if (in.now >= 35ms) return CoreOutputs::degraded(DiagnosticLevel::Stale, "gone");
    CoreOutputs o;
    o.emit("out", msg::Sample{1});
    return o;
  };
  Module m(rig.bus, rig.store, rig.config(false), std::move(core));
  rig.feed_every_10ms(1s);
  rig.bus.run_until(100ms);
  CHECK(m.stale());
  CHECK(m.current_level() == DiagnosticLevel::Stale);
  CHECK(steps == 4);  // 10, 20, 30, 40
  CHECK(rig.outputs.size() == 3);
  const auto it = std::find_if(rig.statuses.begin(), rig.statuses.end(),
                               [](const msg::ModuleStatus& s) { return s.level == DiagnosticLevel::Stale; });
  REQUIRE(it != rig.statuses.end());
  CHECK(it->stamp == 40ms);
  CHECK(it->detail == "gone");
  CHECK(rig.last_status_at(100ms)->level == DiagnosticLevel::Stale);
}

TEST_CASE("a throwing core becomes ERROR without taking the bus down") {
  Rig rig;
  auto core = std::make_unique<Scripted>();
  core->fn = [](const CoreInputs&) -> CoreOutputs { throw std::runtime_error("bad math"); };
  Module m(rig.bus, rig.store, rig.config(false), std::move(core));
  rig.feed_every_10ms(1s);
  rig.bus.run_until(50ms);
  CHECK(m.current_level() == DiagnosticLevel::Error);
  CHECK(m.current_detail() == "core failure: bad math");
  CHECK(rig.bus.panics().empty());
}

TEST_CASE("level never falls below the worst input (randomized)") {
  for (int seed = 0; seed < 20; ++seed) {
    Rig rig;
    std::mt19937 rng(static_cast<unsigned>(seed));
    Module m(rig.bus, rig.store, rig.config(false), std::make_unique<Doubler>());
    std::bernoulli_distribution send(0.3), bad(0.2);
    rig.bus.schedule_timer(7ms, [&](SimTime) {
      if (send(rng)) rig.bus.publish(rig.in_pub, msg::Sample{bad(rng) ? -1.0 : 1.0});
    }, "source");
    bool last_bad = false;
    std::optional<SimTime> last_good;
    rig.bus.subscribe(rig.bus.topic("/in"), [&](const bus::Envelope& e) {
      last_bad = e.get<msg::Sample>()->value < 0;
      if (!last_bad) last_good = rig.bus.now();
    }, "shadow");
    rig.bus.schedule_timer(5ms, [&](SimTime now) {
      const bool timed_out = !last_good || now - *last_good > 30ms;
      if (last_bad || timed_out) CHECK(m.current_level() >= DiagnosticLevel::Error);
    }, "checker");
    rig.bus.run_until(2s);
  }
}

TEST_CASE("signals are logged with a schema announced first") {
  Rig rig;
  std::vector<std::string> seen;
  rig.bus.subscribe(rig.bus.topic("/tsl/schema"), [&](const bus::Envelope&) { seen.push_back("schema"); }, "probe");
  rig.bus.subscribe(rig.bus.topic("/tsl/frames"), [&](const bus::Envelope& e) {
    seen.push_back("frame");
    CHECK(e.get<msg::SignalFrameMsg>()->values.size() == 2);
  }, "probe", 8);
  Module m(rig.bus, rig.store, rig.config(), std::make_unique<Doubler>());
  rig.feed_every_10ms(3s);
  rig.bus.run_until(2500ms);
  REQUIRE(seen.size() > 2);
  CHECK(seen.front() == "schema");
  // Re-announced once per second.
  CHECK(std::count(seen.begin(), seen.end(), "schema") == 3);
}

TEST_CASE("compute delay shifts outputs") {
  Rig rig;
  auto cfg = rig.config();
  cfg.compute_delay = 2ms;
  Module m(rig.bus, rig.store, cfg, std::make_unique<Doubler>());
  rig.feed_every_10ms(1s);
  rig.bus.run_until(30ms);
  CHECK(rig.output_times == std::vector<SimTime>{12ms, 22ms});
}

TEST_CASE("wrap validates bindings") {
  Rig rig;
  auto expect = [&](ModuleConfig cfg, KitErrc code) {
    try {
      Module m(rig.bus, rig.store, cfg, std::make_unique<Doubler>());
      FAIL("bad config accepted");
    } catch (const KitError& e) {
      CHECK(e.code() == code);
    }
  };
  auto cfg = rig.config();
  cfg.inputs[0].topic = "/nope";
  expect(cfg, KitErrc::UnboundTopic);
  cfg = rig.config();
  cfg.inputs = {{"in", "/out", true, std::nullopt}};
  cfg.trigger = "in";
  expect(cfg, KitErrc::InvalidTimeout);
  cfg = rig.config();
  cfg.trigger = "other";
  expect(cfg, KitErrc::UnknownPort);
}

TEST_CASE("registry and wiring documents") {
  CoreRegistry reg;
  reg.add("test.doubler", [] { return std::make_unique<Doubler>(); });
  CHECK_THROWS_AS(reg.add("test.doubler", [] { return std::make_unique<Doubler>(); }), KitError);
  CHECK(reg.create("test.doubler")->name() == "test.doubler");
  try {
    reg.create("nope");
    FAIL("unknown core created");
  } catch (const KitError& e) {
    CHECK(e.code() == KitErrc::UnknownCore);
  }
  const auto doc = nlohmann::json::parse(R"({"modules": [{"id": "d", "core": "test.doubler",
      "inputs": [{"port": "in", "topic": "/in", "timeout_ms": 25}], "outputs": [{"port": "out", "topic": "/out"}],
      "trigger": "in", "compute_delay_ms": 1, "jitter_sigma_ms": 0.5}]})");
  const auto specs = parse_wiring(doc);
  REQUIRE(specs.size() == 1);
  CHECK(specs[0].config.inputs[0].timeout == 25ms);
  CHECK(specs[0].config.compute_delay == 1ms);
  CHECK(specs[0].config.jitter->sigma == 500us);
  CHECK(parse_wiring(wiring_to_json(specs)).size() == 1);
  CHECK(wiring_to_json(parse_wiring(wiring_to_json(specs))) == wiring_to_json(specs));
  try {
    parse_wiring(nlohmann::json::parse(R"({"modules": [{"id": "d", "core": "x"}]})"));
    FAIL("module without period or trigger accepted");
  } catch (const KitError& e) {
    CHECK(e.code() == KitErrc::InvalidWiring);
  }
}
