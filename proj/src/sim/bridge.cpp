#include "racestack/sim/bridge.hpp"

#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "racestack/orchestration.hpp"
#include "racestack/sim/vehicle.hpp"
#include "racestack/vehicle_gate.hpp"

namespace racestack::sim {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::size_t kMaxQueuedFrames = 256;

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  using OnText = std::function<void(std::uint64_t, std::string)>;
  using OnClose = std::function<void(std::uint64_t)>;

  Connection(tcp::socket socket, std::uint64_t id, OnText on_text, OnClose on_close)
      : ws_(std::move(socket)), id_(id), on_text_(std::move(on_text)), on_close_(std::move(on_close)) {}

  void start() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return self->close();
      self->read();
    });
  }

  void send(std::string text) {
    if (closed_) return;
    // A slow client loses old snapshots rather than growing the queue without bound.
    if (queue_.size() >= kMaxQueuedFrames) queue_.erase(queue_.begin() + 1);
    queue_.push_back(std::move(text));
    if (queue_.size() == 1) write();
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      self->on_text_(self->id_, beast::buffers_to_string(self->buffer_.data()));
      self->buffer_.consume(self->buffer_.size());
      self->read();
    });
  }

  void write() {
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    on_close_(id_);
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  std::uint64_t id_;
  OnText on_text_;
  OnClose on_close_;
  bool closed_ = false;
};

}  // namespace

struct BridgeServer::Impl {
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::map<std::uint64_t, std::shared_ptr<Connection>> connections;  // io thread only
  std::uint64_t next_id = 1;
  mutable std::mutex mu;
  std::vector<ClientMessage> inbox;
  std::size_t client_count = 0;
  std::thread thread;

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      const auto id = next_id++;
      auto conn = std::make_shared<Connection>(
          std::move(socket), id,
          [this](std::uint64_t client, std::string text) {
            std::lock_guard lock(mu);
            inbox.push_back({client, std::move(text)});
          },
          [this](std::uint64_t client) {
            connections.erase(client);
            std::lock_guard lock(mu);
            client_count = connections.size();
          });
      connections.emplace(id, conn);
      {
        std::lock_guard lock(mu);
        client_count = connections.size();
      }
      conn->start();
      accept();
    });
  }
};

BridgeServer::BridgeServer(unsigned short port, const std::string& address) : impl_(std::make_unique<Impl>()) {
  try {
    const tcp::endpoint ep{net::ip::make_address(address), port};
    impl_->acceptor.open(ep.protocol());
    impl_->acceptor.set_option(net::socket_base::reuse_address(true));
    impl_->acceptor.bind(ep);
    impl_->acceptor.listen();
  } catch (const boost::system::system_error& e) {
    throw SimError(SimErrc::PortInUse, address + ":" + std::to_string(port) + ": " + e.code().message());
  }
  impl_->accept();
  impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

BridgeServer::~BridgeServer() {
  impl_->ioc.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

unsigned short BridgeServer::port() const { return impl_->acceptor.local_endpoint().port(); }

std::size_t BridgeServer::clients() const {
  std::lock_guard lock(impl_->mu);
  return impl_->client_count;
}

void BridgeServer::broadcast(std::string text) {
  net::post(impl_->ioc, [this, text = std::move(text)] {
    for (auto& [_, c] : impl_->connections) c->send(text);
  });
}

void BridgeServer::send(std::uint64_t client, std::string text) {
  net::post(impl_->ioc, [this, client, text = std::move(text)] {
    if (auto it = impl_->connections.find(client); it != impl_->connections.end()) it->second->send(text);
  });
}

std::vector<ClientMessage> BridgeServer::drain() {
  std::lock_guard lock(impl_->mu);
  return std::exchange(impl_->inbox, {});
}

// --- command handling ---------------------------------------------------------

ojson CommandHandler::handle(const std::string& text) {
  ojson reply;
  nlohmann::json cmd;
  auto fail = [&](SimErrc code, const std::string& detail) {
    ++rejected_;
    reply = {{"type", "error"}, {"error", to_string(code)}, {"detail", detail}};
    if (cmd.is_object() && cmd.contains("id")) reply["id"] = cmd.at("id");
    return reply;
  };
  try {
    cmd = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    return fail(SimErrc::ProtocolViolation, std::string("malformed JSON: ") + e.what());
  }
  try {
    validate_command(cmd);
    const std::string name = cmd.at("cmd").get<std::string>();
    if (name == "lateral_offset") throw SimError(SimErrc::ProtocolViolation, "lateral_offset is scenario-only");
    const bool needs_standstill = name == "reset" || (name == "manual_mode" && cmd.value("enable", false));
    if (needs_standstill && session_->plant() && session_->plant()->state().speed >= kStandstillSpeed)
      throw SimError(SimErrc::NotAtStandstill,
                     "vehicle moving at " + std::to_string(session_->plant()->state().speed) + " m/s");
    auto applied = cmd;
    applied.erase("for_ms");
    applied.erase("id");
    session_->apply_command(applied);
    ++accepted_;
    reply = {{"type", "ack"}, {"cmd", name}, {"t_ns", session_->bus().now().count()}};
    if (cmd.contains("id")) reply["id"] = cmd.at("id");
    return reply;
  } catch (const SimError& e) {
    return fail(e.code(), e.what());
  }
}

// --- bridge -------------------------------------------------------------------------

Bridge::Bridge(Session& session, BridgeServer& server, SimTime period)
    : session_(&session), server_(&server), handler_(session) {
  auto& bus = session.bus();
  auto tap = [&bus](const char* topic, auto setter) {
    if (auto h = bus.find_topic(topic)) bus.subscribe(*h, setter, "bridge");
  };
  tap("/vehicle/state", [this](const bus::Envelope& e) {
    if (auto m = e.get<msg::VehicleState>()) state_ = *m;
  });
  tap("/orchestration/software_state", [this](const bus::Envelope& e) {
    if (auto m = e.get<msg::SoftwareStateReport>()) report_ = *m;
  });
  tap("/orchestration/safety_action", [this](const bus::Envelope& e) {
    if (auto m = e.get<msg::SafetyAction>()) action_ = *m;
  });
  tap("/gate/state", [this](const bus::Envelope& e) {
    if (auto m = e.get<msg::GateState>()) gate_ = *m;
  });
  tap("/vehicle/actuation", [this](const bus::Envelope& e) {
    if (auto m = e.get<msg::ActuationCommand>()) actuation_ = *m;
  });
  bus.schedule_timer(period, [this](SimTime now) { stream(now); }, "bridge");
  bus.set_idle_hook([this] { poll(); });
}

void Bridge::poll() {
  for (auto& m : server_->drain()) server_->send(m.client, handler_.handle(m.text).dump());
}

void Bridge::stream(SimTime now) {
  poll();
  auto frame = [&](const char* type, ojson payload) {
    server_->broadcast(ojson{{"type", type}, {"t_ns", now.count()}, {"payload", std::move(payload)}}.dump());
  };
  if (state_) frame("state", to_json(*state_));
  if (report_) frame("diag", to_json(*report_));
  if (action_) {
    auto p = to_json(*action_);
    if (const auto* sm = session_->safety()) p["behavior"] = to_string(sm->arbitrated_behavior());
    frame("action", std::move(p));
  }
  if (gate_) {
    auto p = to_json(*gate_);
    if (actuation_) p["command"] = to_json(*actuation_);
    frame("gate", std::move(p));
  }
}

}  // namespace racestack::sim
