#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracles/rule_table.hpp"
#include "racestack/orchestration.hpp"

using namespace racestack;
using namespace racestack::orch;

namespace {

OrchErrc code_of(auto&& f) {
  try {
    f();
  } catch (const OrchError& e) {
    return e.code();
  }
  FAIL("no OrchError thrown");
  return OrchErrc::UnknownModule;
}

msg::ModuleStatus status(std::string id, DiagnosticLevel l, SimTime stamp = SimTime{0}) {
  return msg::ModuleStatus{std::move(id), l, "", stamp};
}

msg::SoftwareStateReport report(std::map<std::string, DiagnosticLevel> levels) {
  msg::SoftwareStateReport r;
  for (auto& [id, l] : levels) r.modules[id] = msg::ReportEntry{l, "", true};
  return r;
}

const std::map<std::string, DiagnosticLevel> kAllOk{{"control", DiagnosticLevel::Ok},
                                                     {"state_estimation", DiagnosticLevel::Ok},
                                                     {"telemetry_recorder", DiagnosticLevel::Ok}};

msg::DrivingConditions nominal(double speed = 30.0) {
  msg::DrivingConditions c;
  c.speed = speed;
  return c;
}

SafetyActionKind act(SafetyStateMachine& sm, std::map<std::string, DiagnosticLevel> levels,
                     msg::DrivingConditions c = nominal(), Behavior b = Behavior::DriveFast) {
  return sm.step(report(std::move(levels)), c, b).action;
}

}  // namespace

TEST_CASE("watchdog ingest and cycle") {
  Watchdog wd({{"a", false}, {"b", true}}, 100ms);
  CHECK(code_of([&] { wd.ingest(status("zz", DiagnosticLevel::Ok), 0ms); }) == OrchErrc::UnknownModule);
  CHECK(code_of([] { Watchdog w({{"a", false}, {"a", true}}); }) == OrchErrc::DuplicateModule);

  auto r = wd.cycle(0ms);
  REQUIRE(r.modules.size() == 2);
  CHECK_FALSE(r.modules.at("a").known);
  CHECK(r.modules.at("a").level == DiagnosticLevel::Stale);

  wd.ingest(status("a", DiagnosticLevel::Ok), 10ms);
  wd.ingest(status("b", DiagnosticLevel::Ok), 10ms);
  r = wd.cycle(20ms);
  CHECK(r.modules.at("a").level == DiagnosticLevel::Ok);
  CHECK(r.cycle == 2);
  // Silent for longer than the timeout.
  wd.ingest(status("b", DiagnosticLevel::Ok), 100ms);
  r = wd.cycle(111ms);
  CHECK(r.modules.at("a").level == DiagnosticLevel::Stale);
  CHECK(r.modules.at("a").known);
  CHECK(r.modules.at("b").level == DiagnosticLevel::Ok);
  // An active STALE report is immediate.
  wd.ingest(status("b", DiagnosticLevel::Stale), 112ms);
  CHECK(wd.cycle(113ms).modules.at("b").level == DiagnosticLevel::Stale);
}

TEST_CASE("watchdog: latest reception wins regardless of stamps") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Watchdog wd({{"m", false}});
    std::vector<msg::ModuleStatus> sts;
    for (int i = 0; i < 8; ++i)
      sts.push_back(status("m", static_cast<DiagnosticLevel>(rng() % 4), SimTime{static_cast<int>(rng() % 1000)}));
    std::shuffle(sts.begin(), sts.end(), rng);
    for (std::size_t i = 0; i < sts.size(); ++i) wd.ingest(sts[i], SimTime{static_cast<int>(i)});
    CHECK(wd.cycle(SimTime{10}).modules.at("m").level == sts.back().level);
  }
}

TEST_CASE("rule examples") {
  const RuleThresholds th;
  const std::array<ModuleLevel, 3> ok{{{"control", DiagnosticLevel::Ok, true},
                                       {"state_estimation", DiagnosticLevel::Ok, true},
                                       {"telemetry_recorder", DiagnosticLevel::Ok, false}}};
  auto with = [&](std::size_t i, DiagnosticLevel l) {
    auto m = ok;
    m[i].level = l;
    return m;
  };
  CHECK(classify(ok, nominal(), Behavior::DriveFast, th) == SafetyActionKind::Nominal);
  CHECK(classify(with(1, DiagnosticLevel::Stale), nominal(), Behavior::DriveFast, th) ==
        SafetyActionKind::HardEmergency);
  CHECK(classify(with(2, DiagnosticLevel::Error), nominal(), Behavior::DriveFast, th) == SafetyActionKind::SafeStop);
  CHECK(classify(with(0, DiagnosticLevel::Warn), nominal(), Behavior::DriveFast, th) == SafetyActionKind::Nominal);
  auto c = nominal();
  c.trajectory_valid = false;
  CHECK(classify(ok, c, Behavior::DriveFast, th) == SafetyActionKind::EmergencyStop);
  c = nominal();
  c.lateral_offset = 2.5;
  CHECK(classify(ok, c, Behavior::DriveFast, th) == SafetyActionKind::HardEmergency);
  c.lateral_offset = 2.0;
  CHECK(classify(ok, c, Behavior::DriveFast, th) == SafetyActionKind::Nominal);
  CHECK(classify(ok, nominal(), Behavior::Stop, th) == SafetyActionKind::SafeStop);

  const auto r = evaluate_rules(with(1, DiagnosticLevel::Stale), nominal(), Behavior::DriveFast, th);
  CHECK(r.reason == "critical module state_estimation STALE");
  CHECK(evaluate_rules(ok, nominal(), Behavior::DriveFast, th).reason.empty());
}

TEST_CASE("grid matches the rule-table oracle (3 modules)") {
  RuleGrid grid;
  grid.critical = {true, false, true};
  const auto serial = evaluate_grid_serial(grid);
  CHECK(serial == evaluate_grid_parallel(grid));
  REQUIRE(serial.size() == 64u * 32u * 5u);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    const auto want = oracle::expected(oracle::decode(i, 3), grid.critical);
    if (static_cast<int>(serial[i]) != want) {
      CAPTURE(i);
      CHECK(static_cast<int>(serial[i]) == want);
    }
  }
  const auto c = grid.case_at(1 + 4 * 3 + (0b10110u << 6) + (4u << 11));
  CHECK(c.levels == std::vector<DiagnosticLevel>{DiagnosticLevel::Warn, DiagnosticLevel::Stale, DiagnosticLevel::Ok});
  CHECK_FALSE(c.cond.trajectory_valid);
  CHECK(c.cond.tracking_ok);
  CHECK(c.cond.localization_ok);
  CHECK_FALSE(c.cond.basestation_link_ok);
  CHECK(c.cond.lateral_offset == 0.0);
  CHECK(c.behavior == Behavior::Stop);
}

TEST_CASE("worsening one module never lowers severity") {
  std::mt19937_64 rng(17);
  RuleGrid grid;
  grid.critical = {true, true, false, false, false, true};
  for (int i = 0; i < 5000; ++i) {
    const std::size_t idx = rng() % grid.size();
    const std::size_t m = rng() % 6;
    const std::size_t digit = (idx >> (2 * m)) & 3u;
    if (digit == 3) continue;
    CHECK(grid.evaluate(idx + (std::size_t{1} << (2 * m))) >= grid.evaluate(idx));
  }
}

TEST_CASE("state machine arms only once every module reported OK") {
  SafetyStateMachine sm;
  auto r = report(kAllOk);
  r.modules["telemetry_recorder"].known = false;
  const auto a = sm.step(r, nominal(), Behavior::DriveFast);
  CHECK(a.action == SafetyActionKind::SafeStop);
  CHECK(a.reason == "startup: waiting for telemetry_recorder (unknown)");
  CHECK_FALSE(sm.armed());
  auto warn = kAllOk;
  warn["control"] = DiagnosticLevel::Warn;
  CHECK(act(sm, warn) == SafetyActionKind::SafeStop);
  CHECK(act(sm, kAllOk) == SafetyActionKind::Nominal);
  CHECK(sm.armed());
  // Once armed, WARN is tolerated.
  CHECK(act(sm, warn) == SafetyActionKind::Nominal);
}

TEST_CASE("target speeds follow the behavior") {
  SafetyStateMachine sm;
  CHECK(sm.step(report(kAllOk), nominal(), Behavior::DriveFast).target_speed == 50.0);
  CHECK(sm.step(report(kAllOk), nominal(), Behavior::DriveSlow).target_speed == 20.0);
  CHECK(sm.step(report(kAllOk), nominal(), Behavior::Pit).target_speed == 12.0);
  CHECK(sm.step(report(kAllOk), nominal(), Behavior::None).target_speed == 0.0);
  const auto stop = sm.step(report(kAllOk), nominal(), Behavior::Stop);
  CHECK(stop.action == SafetyActionKind::SafeStop);
  CHECK(stop.target_speed == 0.0);
  CHECK_FALSE(stop.reason.empty());
}

TEST_CASE("hard emergency latches until a confirmed reset at standstill") {
  SafetyStateMachine sm;
  act(sm, kAllOk);
  auto bad = kAllOk;
  bad["state_estimation"] = DiagnosticLevel::Stale;
  CHECK(act(sm, bad) == SafetyActionKind::HardEmergency);
  CHECK(act(sm, kAllOk) == SafetyActionKind::HardEmergency);
  CHECK(act(sm, kAllOk, nominal(0.0)) == SafetyActionKind::HardEmergency);
  CHECK(code_of([&] { sm.reset_hard_emergency(5.0, true); }) == OrchErrc::NotAtStandstill);
  CHECK(code_of([&] { sm.reset_hard_emergency(0.0, false); }) == OrchErrc::NotConfirmed);
  CHECK(sm.hard_latched());
  sm.reset_hard_emergency(0.05, true);
  CHECK(act(sm, kAllOk, nominal(0.0)) == SafetyActionKind::Nominal);
}

TEST_CASE("emergency stop latches until standstill") {
  SafetyStateMachine sm;
  act(sm, kAllOk);
  auto c = nominal(30.0);
  c.trajectory_valid = false;
  CHECK(act(sm, kAllOk, c) == SafetyActionKind::EmergencyStop);
  CHECK(act(sm, kAllOk, nominal(20.0)) == SafetyActionKind::EmergencyStop);
  CHECK(act(sm, kAllOk, nominal(0.5)) == SafetyActionKind::EmergencyStop);
  // A hard trigger still escalates while latched.
  auto hard = nominal(10.0);
  hard.localization_ok = false;
  SafetyStateMachine sm2;
  act(sm2, kAllOk);
  act(sm2, kAllOk, c);
  CHECK(act(sm2, kAllOk, hard) == SafetyActionKind::HardEmergency);
  CHECK(act(sm, kAllOk, nominal(0.05)) == SafetyActionKind::Nominal);
}

TEST_CASE("two-phase resolution reacts one cycle late") {
  StateMachineConfig cfg;
  cfg.mode = ResolutionMode::TwoPhase;
  SafetyStateMachine sm(cfg);
  CHECK(act(sm, kAllOk) == SafetyActionKind::SafeStop);
  CHECK(act(sm, kAllOk) == SafetyActionKind::Nominal);
  auto bad = kAllOk;
  bad["control"] = DiagnosticLevel::Stale;
  CHECK(act(sm, bad) == SafetyActionKind::Nominal);
  CHECK(act(sm, bad) == SafetyActionKind::HardEmergency);
}

TEST_CASE("race control translation and arbitration") {
  RaceControl rc;
  CHECK(rc.translate(static_cast<int>(RaceFlagCode::Red)).request == Behavior::Stop);
  CHECK(rc.translate(static_cast<int>(RaceFlagCode::Green)).request == Behavior::DriveFast);
  CHECK(rc.translate(static_cast<int>(RaceFlagCode::Yellow)).request == Behavior::DriveSlow);
  CHECK(rc.translate(static_cast<int>(RaceFlagCode::Checkered)).request == Behavior::DriveSlow);
  CHECK(rc.translate(static_cast<int>(RaceFlagCode::PitOrder)).request == Behavior::Pit);
  CHECK(code_of([&] { rc.translate(42); }) == OrchErrc::UnknownFlag);
  CHECK(rc.current().request == Behavior::Pit);

  RaceControl custom([](std::int32_t code) -> std::optional<Behavior> {
    return code == 7 ? std::optional(Behavior::Stop) : std::nullopt;
  });
  CHECK(custom.translate(7).request == Behavior::Stop);
  CHECK(code_of([&] { custom.translate(0); }) == OrchErrc::UnknownFlag);

  using B = Behavior;
  auto arb = [](B team, B race) {
    return arbitrate_behavior({team, BehaviorSource::Team}, {race, BehaviorSource::RaceControl}).request;
  };
  CHECK(arb(B::DriveFast, B::DriveSlow) == B::DriveSlow);
  CHECK(arb(B::Stop, B::DriveFast) == B::Stop);
  CHECK(arb(B::None, B::None) == B::None);
  const B order[] = {B::None, B::DriveFast, B::DriveSlow, B::Pit, B::Stop};
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(arb(order[i], order[j]) == order[std::max(i, j)]);
}

// --- nodes on a bus -----------------------------------------------------------

namespace {

struct Stack {
  bus::Bus bus;
  params::ParameterStore store;
  Topics topics;
  std::vector<std::pair<SimTime, msg::SafetyAction>> actions;
  std::vector<SimTime> emergencies;
  std::vector<msg::SoftwareStateReport> reports;
  bus::PublisherHandle status_pub, cond_pub, flag_pub;
  DiagnosticLevel se_level = DiagnosticLevel::Ok;
  bool se_silent = false;

  explicit Stack(std::string resolution = "single_cycle") {
    bus.register_topic({topics.status, MessageType::ModuleStatus, std::nullopt, 16});
    bus.register_topic({topics.report, MessageType::SoftwareStateReport, 20ms, 1});
    bus.register_topic({topics.action, MessageType::SafetyAction, 20ms, 1});
    bus.register_topic({topics.emergency, MessageType::EmergencyInstruction, std::nullopt, 1});
    bus.register_topic({topics.conditions, MessageType::DrivingConditions, 10ms, 1});
    bus.register_topic({topics.team_behavior, MessageType::BehaviorRequest, std::nullopt, 1});
    bus.register_topic({topics.race_control_behavior, MessageType::BehaviorRequest, std::nullopt, 1});
    bus.register_topic({topics.race_flag, MessageType::RaceFlag, std::nullopt, 1});
    declare_parameters(store);
    store.set("sm.resolution", resolution);
    status_pub = bus.advertise(bus.topic(topics.status), "modules");
    cond_pub = bus.advertise(bus.topic(topics.conditions), "conditions");
    flag_pub = bus.advertise(bus.topic(topics.race_flag), "flags");
    bus.schedule_timer(20ms, [this](SimTime now) {
      bus.publish(status_pub, msg::ModuleStatus{"control", DiagnosticLevel::Ok, "", now});
      if (!se_silent) bus.publish(status_pub, msg::ModuleStatus{"state_estimation", se_level, "", now});
    }, "modules");
    bus.schedule_timer(10ms, [this](SimTime) { bus.publish(cond_pub, nominal()); }, "conditions");
  }

  void start() {
    watchdog = std::make_unique<WatchdogNode>(bus, store, std::vector<WatchedModule>{{"control", true},
                                                                                      {"state_estimation", true}});
    rc = std::make_unique<RaceControlNode>(bus);
    sm = std::make_unique<SafetyNode>(bus, store);
    bus.subscribe(bus.topic(topics.action), [this](const bus::Envelope& e) {
      actions.emplace_back(bus.now(), *e.get<msg::SafetyAction>());
    }, "probe");
    bus.subscribe(bus.topic(topics.emergency), [this](const bus::Envelope&) { emergencies.push_back(bus.now()); },
                  "probe");
    bus.subscribe(bus.topic(topics.report), [this](const bus::Envelope& e) {
      reports.push_back(*e.get<msg::SoftwareStateReport>());
    }, "probe");
  }

  std::optional<SimTime> first(SafetyActionKind k) const {
    for (const auto& [t, a] : actions)
      if (a.action == k) return t;
    return std::nullopt;
  }

  std::unique_ptr<WatchdogNode> watchdog;
  std::unique_ptr<RaceControlNode> rc;
  std::unique_ptr<SafetyNode> sm;
};

}  // namespace

TEST_CASE("reaction bound: active STALE becomes a hard emergency one cycle later") {
  Stack s;
  s.start();
  s.bus.schedule_at(1005ms, [&](SimTime now) {
    s.se_level = DiagnosticLevel::Stale;
    s.bus.publish(s.status_pub, msg::ModuleStatus{"state_estimation", DiagnosticLevel::Stale, "lost", now});
  }, "modules");
  s.bus.run_until(2s);
  CHECK(s.first(SafetyActionKind::Nominal).has_value());
  CHECK(s.first(SafetyActionKind::HardEmergency) == 1020ms);
  REQUIRE_FALSE(s.emergencies.empty());
  CHECK(s.emergencies.front() == 1020ms);
}

TEST_CASE("two-phase resolution takes one extra cycle on the bus") {
  Stack s("two_phase");
  s.start();
  s.bus.schedule_at(1005ms, [&](SimTime now) {
    s.se_level = DiagnosticLevel::Stale;
    s.bus.publish(s.status_pub, msg::ModuleStatus{"state_estimation", DiagnosticLevel::Stale, "lost", now});
  }, "modules");
  s.bus.run_until(2s);
  CHECK(s.first(SafetyActionKind::HardEmergency) == 1040ms);
}

TEST_CASE("silent module is overwritten with STALE after the status timeout") {
  Stack s;
  s.start();
  s.bus.schedule_at(1000ms, [&](SimTime) { s.se_silent = true; }, "modules");
  s.bus.run_until(2s);
  // Last status at 1000 ms. The timeout is strict, so the 1100 ms report still
  // shows OK and the 1120 ms report carries STALE.
  CHECK(s.first(SafetyActionKind::HardEmergency) == 1120ms);
  for (const auto& r : s.reports) CHECK(r.modules.size() == 2);
}

TEST_CASE("reports are published with zero statuses") {
  bus::Bus bus;
  params::ParameterStore store;
  bus.register_topic({"/diagnostics/status", MessageType::ModuleStatus, std::nullopt, 16});
  bus.register_topic({"/orchestration/software_state", MessageType::SoftwareStateReport, 20ms, 1});
  std::vector<msg::SoftwareStateReport> reports;
  bus.subscribe(bus.topic("/orchestration/software_state"),
                [&](const bus::Envelope& e) { reports.push_back(*e.get<msg::SoftwareStateReport>()); }, "probe");
  WatchdogNode wd(bus, store, {{"a", false}, {"b", false}, {"c", true}});
  bus.run_until(200ms);
  REQUIRE(reports.size() == 10);
  for (const auto& r : reports) {
    CHECK(r.modules.size() == 3);
    for (const auto& [_, e] : r.modules) CHECK_FALSE(e.known);
  }
}

TEST_CASE("red flag becomes a safe stop through race control") {
  Stack s;
  s.start();
  s.bus.schedule_at(1001ms, [&](SimTime) { s.bus.publish(s.flag_pub, msg::RaceFlag{2}); }, "flags");
  s.bus.schedule_at(1501ms, [&](SimTime) { s.bus.publish(s.flag_pub, msg::RaceFlag{99}); }, "flags");
  s.bus.run_until(2s);
  const auto t = s.first(SafetyActionKind::SafeStop);
  REQUIRE(s.actions.size() > 60);
  CHECK(s.actions[50].second.action == SafetyActionKind::SafeStop);
  CHECK(s.sm->arbitrated_behavior() == Behavior::Stop);
  CHECK(s.rc->rejected_flags() == 1);
  CHECK(t.has_value());
}
