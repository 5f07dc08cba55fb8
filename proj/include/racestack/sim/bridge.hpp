#pragma once

// Console bridge: JSON over WebSocket.
//   server -> client  {"type": "state"|"diag"|"action"|"gate", "t_ns": n, "payload": {...}}
//                     {"type": "ack", "cmd": c, "id": i} | {"type": "error", "error": code, "detail": d, "id": i}
//   client -> server  {"cmd": "behavior"|"flag"|"operator"|"reset"|"manual_mode", ..., "id": optional}
// The socket runs on its own thread. Commands are queued and applied on the
// simulation thread between events; malformed input is answered with an error
// and the connection stays open.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "racestack/messages.hpp"
#include "racestack/sim/error.hpp"
#include "racestack/sim/scenario.hpp"

namespace racestack::sim {

struct ClientMessage {
  std::uint64_t client = 0;
  std::string text;
};

class BridgeServer {
 public:
  // Port 0 picks a free port. Throws PortInUse.
  explicit BridgeServer(unsigned short port, const std::string& address = "127.0.0.1");
  ~BridgeServer();
  BridgeServer(const BridgeServer&) = delete;
  BridgeServer& operator=(const BridgeServer&) = delete;

  unsigned short port() const;
  std::size_t clients() const;

  // Thread-safe.
  void broadcast(std::string text);
  void send(std::uint64_t client, std::string text);
  std::vector<ClientMessage> drain();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Validates and applies one client message; returns the reply object.
class CommandHandler {
 public:
  explicit CommandHandler(Session& session) : session_(&session) {}
  nlohmann::ordered_json handle(const std::string& text);
  std::uint64_t accepted() const { return accepted_; }
  std::uint64_t rejected() const { return rejected_; }

 private:
  Session* session_;
  std::uint64_t accepted_ = 0;
  std::uint64_t rejected_ = 0;
};

// Wires a session to a server: streams snapshots every `period` of virtual time
// and applies queued commands from the bus idle hook.
class Bridge {
 public:
  Bridge(Session& session, BridgeServer& server, SimTime period = std::chrono::milliseconds(50));
  void poll();
  const CommandHandler& handler() const { return handler_; }

 private:
  void stream(SimTime now);

  Session* session_;
  BridgeServer* server_;
  CommandHandler handler_;
  std::optional<msg::VehicleState> state_;
  std::optional<msg::SoftwareStateReport> report_;
  std::optional<msg::SafetyAction> action_;
  std::optional<msg::GateState> gate_;
  std::optional<msg::ActuationCommand> actuation_;
};

}  // namespace racestack::sim
