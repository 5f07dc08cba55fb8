#include <doctest.h>

#include <chrono>
#include <functional>
#include <set>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "racestack/sim/bridge.hpp"
#include "racestack/sim/vehicle.hpp"

using namespace racestack;
using namespace racestack::sim;
using namespace std::chrono_literals;
using nlohmann::json;

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;

namespace {

class Client {
 public:
  explicit Client(unsigned short port) : ws_(ioc_) {
    asio::ip::tcp::resolver resolver(ioc_);
    asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/");
  }
  ~Client() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }
  void send(const std::string& text) { ws_.write(asio::buffer(text)); }
  json read() {
    beast::flat_buffer buf;
    ws_.read(buf);
    return json::parse(beast::buffers_to_string(buf.data()));
  }

 private:
  asio::io_context ioc_;
  websocket::stream<asio::ip::tcp::socket> ws_;
};

bool eventually(const std::function<bool()>& cond) {
  for (int i = 0; i < 500; ++i) {
    if (cond()) return true;
    std::this_thread::sleep_for(10ms);
  }
  return cond();
}

ScenarioSpec moving(double speed) {
  auto doc = json::parse(R"({"name": "bridge", "duration_ms": 5000})");
  doc["initial_speed"] = speed;
  return parse_scenario(doc);
}

}  // namespace

TEST_CASE("command handler replies") {
  Session session(moving(15.0));
  session.run_until(100ms);
  CommandHandler h(session);

  auto r = h.handle("{not json");
  CHECK(r["type"] == "error");
  CHECK(r["error"] == "ProtocolViolation");
  CHECK_FALSE(r.contains("id"));

  r = h.handle(R"({"cmd": "fly", "id": 4})");
  CHECK(r["error"] == "ProtocolViolation");
  CHECK(r["id"] == 4);

  r = h.handle(R"({"cmd": "lateral_offset", "value": 3})");
  CHECK(r["error"] == "ProtocolViolation");

  r = h.handle(R"({"cmd": "reset", "confirmed": true, "id": "r1"})");
  CHECK(r["error"] == "NotAtStandstill");
  CHECK(r["id"] == "r1");
  r = h.handle(R"({"cmd": "manual_mode", "enable": true})");
  CHECK(r["error"] == "NotAtStandstill");

  r = h.handle(R"({"cmd": "behavior", "value": "pit", "id": 9})");
  CHECK(r["type"] == "ack");
  CHECK(r["cmd"] == "behavior");
  CHECK(r["t_ns"] == 100'000'000);
  CHECK(r["id"] == 9);
  r = h.handle(R"({"cmd": "operator", "brake": 0.5, "override": true, "for_ms": 200})");
  CHECK(r["type"] == "ack");
  r = h.handle(R"({"cmd": "manual_mode", "enable": false})");
  CHECK(r["type"] == "ack");

  CHECK(h.accepted() == 3);
  CHECK(h.rejected() == 5);
}

TEST_CASE("reset is accepted at standstill") {
  Session session(moving(0.0));
  session.run_until(50ms);
  CommandHandler h(session);
  CHECK(h.handle(R"({"cmd": "reset", "confirmed": true})")["type"] == "ack");
  CHECK(h.handle(R"({"cmd": "manual_mode", "enable": true})")["type"] == "ack");
}

TEST_CASE("server binds, refuses a taken port and exchanges text") {
  BridgeServer server(0);
  REQUIRE(server.port() != 0);
  try {
    BridgeServer second(server.port());
    FAIL("second bind succeeded");
  } catch (const SimError& e) {
    CHECK(e.code() == SimErrc::PortInUse);
  }

  Client c(server.port());
  REQUIRE(eventually([&] { return server.clients() == 1; }));
  c.send("hello");
  std::vector<ClientMessage> got;
  REQUIRE(eventually([&] {
    auto batch = server.drain();
    got.insert(got.end(), batch.begin(), batch.end());
    return !got.empty();
  }));
  CHECK(got[0].text == "hello");
  server.send(got[0].client, R"({"type": "pong"})");
  CHECK(c.read()["type"] == "pong");
  server.broadcast(R"({"type": "all"})");
  CHECK(c.read()["type"] == "all");
}

TEST_CASE("bridge streams snapshots and survives malformed input") {
  Session session(moving(20.0));
  BridgeServer server(0);
  Bridge bridge(session, server);
  Client c(server.port());
  REQUIRE(eventually([&] { return server.clients() == 1; }));

  c.send("][");
  REQUIRE(eventually([&] {
    bridge.poll();
    return bridge.handler().rejected() == 1;
  }));
  auto err = c.read();
  CHECK(err["type"] == "error");
  CHECK(err["error"] == "ProtocolViolation");

  // Same connection still works.
  c.send(R"({"cmd": "behavior", "value": "drive_slow", "id": 1})");
  REQUIRE(eventually([&] {
    bridge.poll();
    return bridge.handler().accepted() == 1;
  }));
  auto ack = c.read();
  CHECK(ack["type"] == "ack");
  CHECK(ack["id"] == 1);

  session.run_until(200ms);
  std::set<std::string> types;
  std::int64_t last_t = -1;
  for (int i = 0; i < 12; ++i) {
    auto m = c.read();
    types.insert(m["type"].get<std::string>());
    CHECK(m["t_ns"].get<std::int64_t>() >= last_t);
    last_t = m["t_ns"].get<std::int64_t>();
    CHECK(m["payload"].is_object());
    if (m["type"] == "action") CHECK(m["payload"].contains("behavior"));
    if (m["type"] == "state") CHECK(m["payload"]["speed"].get<double>() > 0.0);
  }
  CHECK(types == std::set<std::string>{"state", "diag", "action", "gate"});
}
