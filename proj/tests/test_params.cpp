#include <doctest.h>

#include <cmath>

#include "racestack/params.hpp"

using namespace racestack::params;

namespace {

ParamErrc code_of(auto&& f) {
  try {
    f();
  } catch (const ParamError& e) {
    return e.code();
  }
  FAIL("no ParamError thrown");
  return ParamErrc::ParseError;
}

ParameterStore sample_store() {
  ParameterStore s;
  s.declare({"sm.cycle_ms", std::int64_t{20}, true, "state machine period"});
  s.declare({"gate.brake_pressure_bar", 40.0});
  s.declare({"control.kp", 1.0});
  s.declare({"sm.resolution", std::string("single_cycle")});
  s.declare({"planner.enabled", true});
  s.declare({"planner.weights", std::vector<double>{1.0, 2.0}});
  return s;
}

}  // namespace

TEST_CASE("declare and get") {
  auto s = sample_store();
  CHECK(s.get_int("sm.cycle_ms") == 20);
  CHECK(s.get_double("gate.brake_pressure_bar") == 40.0);
  CHECK(s.get_text("sm.resolution") == "single_cycle");
  CHECK(code_of([&] { s.declare({"sm.cycle_ms", std::int64_t{10}}); }) == ParamErrc::Redeclaration);
  CHECK(code_of([&] { s.declare({"", 1.0}); }) == ParamErrc::InvalidName);
  CHECK(code_of([&] { s.declare({"a..b", 1.0}); }) == ParamErrc::InvalidName);
  CHECK(code_of([&] { s.declare({"bad name", 1.0}); }) == ParamErrc::InvalidName);
  CHECK(code_of([&] { (void)s.get("nope"); }) == ParamErrc::Undeclared);
  CHECK(code_of([&] { (void)s.get_double("sm.cycle_ms"); }) == ParamErrc::TypeMismatch);
}

TEST_CASE("declare_if_absent is idempotent for the same type only") {
  ParameterStore s;
  CHECK(s.declare_if_absent({"x.y", 1.0}));
  s.set("x.y", 2.0);
  CHECK_FALSE(s.declare_if_absent({"x.y", 5.0}));
  CHECK(s.get_double("x.y") == 2.0);
  CHECK(code_of([&] { s.declare_if_absent({"x.y", std::int64_t{1}}); }) == ParamErrc::Redeclaration);
}

TEST_CASE("set enforces type, read-only and finiteness") {
  auto s = sample_store();
  s.set("control.kp", 2.5);
  CHECK(s.get_double("control.kp") == 2.5);
  CHECK(code_of([&] { s.set("control.kp", std::int64_t{3}); }) == ParamErrc::TypeMismatch);
  CHECK(code_of([&] { s.set("sm.cycle_ms", std::int64_t{10}); }) == ParamErrc::ReadOnly);
  CHECK(code_of([&] { s.set("control.kp", std::nan("")); }) == ParamErrc::InvalidValue);
  CHECK(s.get_double("control.kp") == 2.5);
}

TEST_CASE("override document applies atomically") {
  auto s = sample_store();
  CHECK(s.apply_overrides(R"({"gate.brake_pressure_bar": 40.0})") == 1);
  CHECK(s.apply_overrides("{}") == 0);

  const auto before = s.snapshot().values();
  try {
    s.apply_overrides(R"({"control.kp": 3.0, "typo.name": 1, "other.typo": true})");
    FAIL("unknown key accepted");
  } catch (const ParamError& e) {
    CHECK(e.code() == ParamErrc::UnknownParameter);
    CHECK(e.names() == std::vector<std::string>{"other.typo", "typo.name"});
  }
  CHECK(s.snapshot().values() == before);

  // A type error in the last entry also leaves everything untouched.
  CHECK(code_of([&] { s.apply_overrides(R"({"control.kp": 3.0, "sm.cycle_ms": 1.5})"); }) ==
        ParamErrc::TypeMismatch);
  CHECK(s.snapshot().values() == before);

  CHECK(code_of([&] { s.apply_overrides(R"({"control": {"kp": 3.0}})"); }) == ParamErrc::ParseError);
  CHECK(code_of([&] { s.apply_overrides("{not json"); }) == ParamErrc::ParseError);
  CHECK(code_of([&] { s.apply_overrides("[1, 2]"); }) == ParamErrc::ParseError);

  CHECK(s.apply_overrides(R"({"control.kp": 3.0, "sm.cycle_ms": 10, "planner.weights": [0.5], "planner.enabled": false})") == 4);
  CHECK(s.get_double("control.kp") == 3.0);
  CHECK(s.get_int("sm.cycle_ms") == 10);  // read-only parameters are launch-time configurable
  CHECK(s.get_as<std::vector<double>>("planner.weights") == std::vector<double>{0.5});
  CHECK_FALSE(s.get_bool("planner.enabled"));
}

TEST_CASE("integers and floats are distinguished by their spelling") {
  auto s = sample_store();
  CHECK(code_of([&] { s.apply_overrides(R"({"control.kp": 3})"); }) == ParamErrc::TypeMismatch);
  CHECK(s.apply_overrides(R"({"control.kp": 3e0})") == 1);
}

TEST_CASE("later documents win") {
  auto s = sample_store();
  CHECK(s.apply_overrides(std::vector<std::string>{R"({"control.kp": 2.0})", R"({"control.kp": 4.0})"}) == 1);
  CHECK(s.get_double("control.kp") == 4.0);
}

TEST_CASE("change callbacks") {
  auto s = sample_store();
  int kp_calls = 0;
  double seen_old = 0, seen_new = 0;
  auto h = s.on_change("control.kp", [&](const ParameterValue& o, const ParameterValue& n) {
    ++kp_calls;
    seen_old = std::get<double>(o);
    seen_new = std::get<double>(n);
  });
  s.set("control.kp", 2.0);
  CHECK(kp_calls == 1);
  CHECK(seen_old == 1.0);
  CHECK(seen_new == 2.0);
  CHECK(code_of([&] { s.set("control.kp", std::int64_t{1}); }) == ParamErrc::TypeMismatch);
  CHECK(kp_calls == 1);
  s.apply_overrides(R"({"control.kp": 5.0, "gate.brake_pressure_bar": 41.0, "planner.enabled": false})");
  CHECK(kp_calls == 2);
  s.remove_on_change(h);
  s.set("control.kp", 9.0);
  CHECK(kp_calls == 2);
  CHECK(code_of([&] { s.on_change("nope", [](auto&, auto&) {}); }) == ParamErrc::Undeclared);
}

TEST_CASE("snapshot is a detached copy and views are prefix scoped") {
  auto s = sample_store();
  const auto snap = s.snapshot();
  s.set("control.kp", 7.0);
  CHECK(std::get<double>(snap.get("control.kp")) == 1.0);
  ParameterView v(s, "control");
  CHECK(v.get_double("kp") == 7.0);
  CHECK(v.qualified("kp") == "control.kp");
}
