#pragma once

// In-process publish/subscribe bus with a deterministic virtual-time executor.
//
// Every publish is stamped with (publisher id, per-publisher sequence, executor
// time). Subscribers own a bounded queue (depth 1 unless overridden) where the
// oldest entry is replaced when full. Events at equal virtual time run in the
// order: faults, deliveries, timers; ties break on registration index and then
// insertion order. All callbacks run on the thread calling run_until().

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "racestack/messages.hpp"
#include "racestack/sim_time.hpp"

namespace racestack::bus {

enum class BusErrc {
  DuplicateTopic,
  InvalidSpec,
  UnknownTopic,
  TypeMismatch,
  PublishAfterCrash,
  InvalidPeriod,
  ActivationInPast,
  InvalidHandle,
  StampMismatch,
};

std::string_view to_string(BusErrc c);

class BusError : public std::runtime_error {
 public:
  BusError(BusErrc code, const std::string& what);
  BusErrc code() const noexcept { return code_; }

 private:
  BusErrc code_;
};

struct TopicSpec {
  std::string name;
  MessageType type = MessageType::Sample;
  std::optional<SimTime> nominal_period;  // none = event driven
  std::size_t queue_depth = 1;
};

struct TopicHandle {
  std::uint32_t index = 0;
  friend auto operator<=>(TopicHandle, TopicHandle) = default;
};
struct PublisherHandle {
  std::uint32_t index = 0;
};
struct SubscriptionHandle {
  std::uint32_t index = 0;
};
struct TimerHandle {
  std::uint32_t index = 0;
};

struct Envelope {
  std::string topic;
  std::string publisher_id;
  std::uint64_t sequence = 0;
  SimTime publish_stamp{0};
  std::shared_ptr<const Message> payload;
  std::uint64_t payload_hash = 0;

  template <class T>
  const T* get() const {
    return payload ? std::get_if<T>(payload.get()) : nullptr;
  }
};

struct FaultSpec {
  enum class Kind { CrashModule, DropTopic, DelayTopic, FreezeModule };
  Kind kind = Kind::CrashModule;
  std::string target;  // module id or topic name
  SimTime activation{0};
  SimTime delay{0};                // DelayTopic only
  std::optional<SimTime> duration;  // required for FreezeModule; none = rest of run
};

std::string_view to_string(FaultSpec::Kind k);
std::optional<FaultSpec::Kind> parse_fault_kind(std::string_view s);

// Gaussian offset added to every timer interval, clamped to +-3 sigma.
struct JitterSpec {
  SimTime sigma{0};
};

enum class EventKind : std::uint8_t { Fault = 0, Deliver = 1, Timer = 2 };

struct PanicRecord {
  SimTime t{0};
  std::string module;
  std::string what;
};

struct GraphEdge {
  std::string module;
  std::string topic;
  MessageType type = MessageType::Sample;
  bool publishes = false;
  friend auto operator<=>(const GraphEdge&, const GraphEdge&) = default;
};

enum class Pacing { Virtual, WallClock };

using Callback = std::function<void(const Envelope&)>;
using TimerCallback = std::function<void(SimTime now)>;

class Bus {
 public:
  explicit Bus(std::uint64_t seed = 0);
  Bus(const Bus&) = delete;
  Bus& operator=(const Bus&) = delete;

  TopicHandle register_topic(TopicSpec spec);
  std::optional<TopicHandle> find_topic(std::string_view name) const;
  TopicHandle topic(std::string_view name) const;  // throws UnknownTopic
  const TopicSpec& spec(TopicHandle h) const;
  std::vector<TopicSpec> topics() const;

  PublisherHandle advertise(TopicHandle topic, std::string owner);
  Envelope publish(PublisherHandle pub, Message payload);

  // Re-publishes a recorded envelope verbatim (publisher id and sequence kept).
  // The envelope stamp must equal the current executor time.
  void republish(const Envelope& env);

  SubscriptionHandle subscribe(TopicHandle topic, Callback cb, std::string owner,
                               std::optional<std::size_t> depth = std::nullopt);

  TimerHandle schedule_timer(SimTime period, TimerCallback cb, std::string owner,
                             std::optional<JitterSpec> jitter = std::nullopt);
  void schedule_at(SimTime t, TimerCallback cb, std::string owner);

  void inject_fault(FaultSpec fault);

  std::uint64_t run_until(SimTime t_end);
  void request_stop() { stop_requested_ = true; }

  SimTime now() const { return now_; }
  std::uint64_t seed() const { return seed_; }

  bool is_crashed(std::string_view module) const;
  bool is_frozen(std::string_view module) const;
  // Marks a module crashed at the current instant (used for caught panics too).
  void crash_module(std::string_view module);

  const std::vector<PanicRecord>& panics() const { return panics_; }
  std::vector<GraphEdge> graph() const;

  // Line-delimited JSON event trace; nullptr disables.
  void set_trace(std::ostream* out) { trace_ = out; }

  // WallClock pacing sleeps so virtual time tracks wall time at 1 ms granularity and
  // calls the idle hook between events, where external commands may be published.
  void set_pacing(Pacing p) { pacing_ = p; }
  void set_idle_hook(std::function<void()> hook) { idle_hook_ = std::move(hook); }

 private:
  struct Topic {
    TopicSpec spec;
    std::vector<std::uint32_t> subscribers;
  };
  struct Publisher {
    std::uint32_t topic = 0;
    std::string owner;
    std::uint64_t last_seq = 0;
  };
  struct Pending {
    Envelope env;
    SimTime deliver_at{0};
  };
  struct Subscription {
    std::uint32_t topic = 0;
    Callback cb;
    std::string owner;
    std::size_t depth = 1;
    std::deque<Pending> queue;
    std::optional<SimTime> scheduled_at;
  };
  struct Timer {
    SimTime period{0};
    TimerCallback cb;
    std::string owner;
    std::optional<JitterSpec> jitter;
    std::mt19937_64 rng;
    SimTime base{0};
    std::uint64_t fires = 0;
    bool one_shot = false;
  };
  struct TopicFault {
    FaultSpec spec;
    bool active_at(SimTime t) const;
  };
  struct Event {
    SimTime t{0};
    EventKind kind = EventKind::Timer;
    std::uint32_t order = 0;
    std::uint64_t insertion = 0;
    bool operator>(const Event& o) const;
  };

  void push_event(SimTime t, EventKind kind, std::uint32_t order);
  void deliver(const Envelope& env, std::uint32_t topic_index);
  void process(const Event& ev);
  void process_delivery(std::uint32_t sub_index);
  void process_timer(std::uint32_t timer_index);
  void process_fault(std::uint32_t fault_index);
  void schedule_next(std::uint32_t timer_index, SimTime fired_at);
  template <class F>
  bool guarded(const std::string& owner, F&& f);
  void trace_line(const std::string& line);

  std::uint64_t seed_;
  SimTime now_{0};
  std::vector<Topic> topics_;
  std::map<std::string, std::uint32_t, std::less<>> topic_index_;
  std::vector<Publisher> publishers_;
  std::vector<Subscription> subscriptions_;
  std::vector<Timer> timers_;
  std::vector<FaultSpec> faults_;
  std::vector<TopicFault> topic_faults_;
  std::set<std::string, std::less<>> crashed_;
  std::map<std::string, SimTime, std::less<>> frozen_until_;
  std::set<GraphEdge> edges_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::uint64_t insertion_ = 0;
  std::uint64_t events_processed_ = 0;
  std::vector<PanicRecord> panics_;
  std::ostream* trace_ = nullptr;
  Pacing pacing_ = Pacing::Virtual;
  std::function<void()> idle_hook_;
  std::atomic<bool> stop_requested_{false};
};

}  // namespace racestack::bus
