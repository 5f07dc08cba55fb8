#include "racestack/bus.hpp"

#include "racestack/bytes.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <thread>

namespace racestack::bus {

namespace {

std::string_view kind_name(EventKind k) {
  switch (k) {
    case EventKind::Fault: return "fault";
    case EventKind::Deliver: return "deliver";
    case EventKind::Timer: return "timer";
  }
  return "?";
}

}  // namespace

std::string_view to_string(BusErrc c) {
  switch (c) {
    case BusErrc::DuplicateTopic: return "DuplicateTopic";
    case BusErrc::InvalidSpec: return "InvalidSpec";
    case BusErrc::UnknownTopic: return "UnknownTopic";
    case BusErrc::TypeMismatch: return "TypeMismatch";
    case BusErrc::PublishAfterCrash: return "PublishAfterCrash";
    case BusErrc::InvalidPeriod: return "InvalidPeriod";
    case BusErrc::ActivationInPast: return "ActivationInPast";
    case BusErrc::InvalidHandle: return "InvalidHandle";
    case BusErrc::StampMismatch: return "StampMismatch";
  }
  return "?";
}

BusError::BusError(BusErrc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

std::string_view to_string(FaultSpec::Kind k) {
  switch (k) {
    case FaultSpec::Kind::CrashModule: return "crash";
    case FaultSpec::Kind::DropTopic: return "drop";
    case FaultSpec::Kind::DelayTopic: return "delay";
    case FaultSpec::Kind::FreezeModule: return "freeze";
  }
  return "?";
}

std::optional<FaultSpec::Kind> parse_fault_kind(std::string_view s) {
  if (s == "crash") return FaultSpec::Kind::CrashModule;
  if (s == "drop") return FaultSpec::Kind::DropTopic;
  if (s == "delay") return FaultSpec::Kind::DelayTopic;
  if (s == "freeze") return FaultSpec::Kind::FreezeModule;
  return std::nullopt;
}

bool Bus::TopicFault::active_at(SimTime t) const {
  if (t < spec.activation) return false;
  return !spec.duration || t < spec.activation + *spec.duration;
}

bool Bus::Event::operator>(const Event& o) const {
  if (t != o.t) return t > o.t;
  if (kind != o.kind) return kind > o.kind;
  if (order != o.order) return order > o.order;
  return insertion > o.insertion;
}

Bus::Bus(std::uint64_t seed) : seed_(seed) {}

TopicHandle Bus::register_topic(TopicSpec spec) {
  if (spec.name.empty()) throw BusError(BusErrc::InvalidSpec, "empty topic name");
  if (spec.queue_depth == 0) throw BusError(BusErrc::InvalidSpec, "zero queue depth on " + spec.name);
  if (spec.nominal_period && spec.nominal_period->count() <= 0)
    throw BusError(BusErrc::InvalidSpec, "non-positive nominal period on " + spec.name);
  if (topic_index_.contains(spec.name)) throw BusError(BusErrc::DuplicateTopic, spec.name);
  auto idx = static_cast<std::uint32_t>(topics_.size());
  topic_index_.emplace(spec.name, idx);
  topics_.push_back(Topic{std::move(spec), {}});
  return TopicHandle{idx};
}

std::optional<TopicHandle> Bus::find_topic(std::string_view name) const {
  auto it = topic_index_.find(name);
  if (it == topic_index_.end()) return std::nullopt;
  return TopicHandle{it->second};
}

TopicHandle Bus::topic(std::string_view name) const {
  auto h = find_topic(name);
  if (!h) throw BusError(BusErrc::UnknownTopic, std::string(name));
  return *h;
}

const TopicSpec& Bus::spec(TopicHandle h) const {
  if (h.index >= topics_.size()) throw BusError(BusErrc::InvalidHandle, "topic handle");
  return topics_[h.index].spec;
}

std::vector<TopicSpec> Bus::topics() const {
  std::vector<TopicSpec> out;
  for (const auto& t : topics_) out.push_back(t.spec);
  return out;
}

PublisherHandle Bus::advertise(TopicHandle topic, std::string owner) {
  if (topic.index >= topics_.size()) throw BusError(BusErrc::UnknownTopic, "advertise on invalid handle");
  const auto& spec = topics_[topic.index].spec;
  edges_.insert(GraphEdge{owner, spec.name, spec.type, true});
  publishers_.push_back(Publisher{topic.index, std::move(owner), 0});
  return PublisherHandle{static_cast<std::uint32_t>(publishers_.size() - 1)};
}

Envelope Bus::publish(PublisherHandle pub, Message payload) {
  if (pub.index >= publishers_.size()) throw BusError(BusErrc::InvalidHandle, "publisher handle");
  auto& p = publishers_[pub.index];
  const auto& topic = topics_[p.topic];
  if (crashed_.contains(p.owner)) throw BusError(BusErrc::PublishAfterCrash, p.owner);
  if (type_of(payload) != topic.spec.type) {
    throw BusError(BusErrc::TypeMismatch, topic.spec.name + " expects " +
                                              std::string(to_string(topic.spec.type)) + ", got " +
                                              std::string(to_string(type_of(payload))));
  }
  Envelope env;
  env.topic = topic.spec.name;
  env.publisher_id = p.owner;
  env.sequence = ++p.last_seq;
  env.publish_stamp = now_;
  env.payload_hash = payload_hash(payload);
  env.payload = std::make_shared<const Message>(std::move(payload));
  deliver(env, p.topic);
  return env;
}

void Bus::republish(const Envelope& env) {
  auto h = find_topic(env.topic);
  if (!h) throw BusError(BusErrc::UnknownTopic, env.topic);
  if (!env.payload || type_of(*env.payload) != topics_[h->index].spec.type)
    throw BusError(BusErrc::TypeMismatch, env.topic);
  if (env.publish_stamp != now_) throw BusError(BusErrc::StampMismatch, env.topic);
  deliver(env, h->index);
}

void Bus::deliver(const Envelope& env, std::uint32_t topic_index) {
  SimTime delay{0};
  for (const auto& f : topic_faults_) {
    if (f.spec.target != env.topic || !f.active_at(now_)) continue;
    if (f.spec.kind == FaultSpec::Kind::DropTopic) return;
    delay = std::max(delay, f.spec.delay);
  }
  const SimTime at = now_ + delay;
  for (auto si : topics_[topic_index].subscribers) {
    auto& sub = subscriptions_[si];
    if (crashed_.contains(sub.owner)) continue;
    sub.queue.push_back(Pending{env, at});
    while (sub.queue.size() > sub.depth) sub.queue.pop_front();
    if (!sub.scheduled_at || *sub.scheduled_at > at) {
      sub.scheduled_at = at;
      push_event(at, EventKind::Deliver, si);
    }
  }
}

SubscriptionHandle Bus::subscribe(TopicHandle topic, Callback cb, std::string owner,
                                  std::optional<std::size_t> depth) {
  if (topic.index >= topics_.size()) throw BusError(BusErrc::UnknownTopic, "subscribe on invalid handle");
  if (depth && *depth == 0) throw BusError(BusErrc::InvalidSpec, "zero subscription depth");
  auto& t = topics_[topic.index];
  edges_.insert(GraphEdge{owner, t.spec.name, t.spec.type, false});
  Subscription s;
  s.topic = topic.index;
  s.cb = std::move(cb);
  s.owner = std::move(owner);
  s.depth = depth.value_or(t.spec.queue_depth);
  auto idx = static_cast<std::uint32_t>(subscriptions_.size());
  subscriptions_.push_back(std::move(s));
  t.subscribers.push_back(idx);
  return SubscriptionHandle{idx};
}

TimerHandle Bus::schedule_timer(SimTime period, TimerCallback cb, std::string owner,
                                std::optional<JitterSpec> jitter) {
  if (period.count() <= 0) throw BusError(BusErrc::InvalidPeriod, owner);
  if (jitter && jitter->sigma.count() < 0) throw BusError(BusErrc::InvalidPeriod, "negative jitter");
  auto idx = static_cast<std::uint32_t>(timers_.size());
  Timer t;
  t.period = period;
  t.cb = std::move(cb);
  t.rng.seed(seed_ ^ fnv1a64(owner) ^ (0x9e3779b97f4a7c15ULL * (idx + 1)));
  t.owner = std::move(owner);
  t.jitter = jitter;
  t.base = now_;
  timers_.push_back(std::move(t));
  schedule_next(idx, now_);
  return TimerHandle{idx};
}

void Bus::schedule_at(SimTime t, TimerCallback cb, std::string owner) {
  if (t < now_) throw BusError(BusErrc::ActivationInPast, owner);
  auto idx = static_cast<std::uint32_t>(timers_.size());
  Timer tm;
  tm.cb = std::move(cb);
  tm.owner = std::move(owner);
  tm.one_shot = true;
  tm.base = t;
  timers_.push_back(std::move(tm));
  push_event(t, EventKind::Timer, idx);
}

void Bus::schedule_next(std::uint32_t timer_index, SimTime fired_at) {
  auto& t = timers_[timer_index];
  SimTime next;
  if (t.jitter && t.jitter->sigma.count() > 0) {
    const double sigma = static_cast<double>(t.jitter->sigma.count());
    std::normal_distribution<double> dist(0.0, sigma);
    const double offset = std::clamp(dist(t.rng), -3.0 * sigma, 3.0 * sigma);
    next = fired_at + t.period + SimTime{static_cast<std::int64_t>(std::llround(offset))};
    if (next <= fired_at) next = fired_at + SimTime{1};
  } else {
    next = t.base + t.period * static_cast<std::int64_t>(t.fires + 1);
  }
  push_event(next, EventKind::Timer, timer_index);
}

void Bus::inject_fault(FaultSpec fault) {
  if (fault.activation < now_) throw BusError(BusErrc::ActivationInPast, fault.target);
  if (fault.target.empty()) throw BusError(BusErrc::InvalidSpec, "fault without target");
  if (fault.kind == FaultSpec::Kind::FreezeModule && (!fault.duration || fault.duration->count() <= 0))
    throw BusError(BusErrc::InvalidSpec, "freeze fault needs a positive duration");
  if (fault.kind == FaultSpec::Kind::DropTopic || fault.kind == FaultSpec::Kind::DelayTopic) {
    if (!find_topic(fault.target)) throw BusError(BusErrc::UnknownTopic, fault.target);
    topic_faults_.push_back(TopicFault{fault});
  }
  auto idx = static_cast<std::uint32_t>(faults_.size());
  faults_.push_back(std::move(fault));
  push_event(faults_.back().activation, EventKind::Fault, idx);
}

void Bus::push_event(SimTime t, EventKind kind, std::uint32_t order) {
  queue_.push(Event{t, kind, order, insertion_++});
}

bool Bus::is_crashed(std::string_view module) const { return crashed_.contains(module); }

bool Bus::is_frozen(std::string_view module) const {
  auto it = frozen_until_.find(module);
  return it != frozen_until_.end() && now_ < it->second;
}

void Bus::crash_module(std::string_view module) {
  auto [it, inserted] = crashed_.emplace(module);
  if (!inserted) return;
  for (auto& s : subscriptions_) {
    if (s.owner == module) s.queue.clear();
  }
}

template <class F>
bool Bus::guarded(const std::string& owner, F&& f) {
  try {
    f();
    return true;
  } catch (const std::exception& e) {
    panics_.push_back(PanicRecord{now_, owner, e.what()});
  } catch (...) {
    panics_.push_back(PanicRecord{now_, owner, "unknown exception"});
  }
  crash_module(owner);
  return false;
}

void Bus::trace_line(const std::string& line) {
  if (trace_) *trace_ << line << '\n';
}

std::uint64_t Bus::run_until(SimTime t_end) {
  std::uint64_t count = 0;
  const auto wall_start = std::chrono::steady_clock::now();
  const SimTime virtual_start = now_;
  auto wall_virtual = [&] {
    return virtual_start + std::chrono::duration_cast<SimTime>(std::chrono::steady_clock::now() - wall_start);
  };
  stop_requested_ = false;
  while (!stop_requested_) {
    if (pacing_ == Pacing::WallClock) {
      const SimTime next = queue_.empty() ? t_end : std::min(queue_.top().t, t_end);
      const SimTime vt = wall_virtual();
      if (vt < next) {
        now_ = std::max(now_, std::min(vt, t_end));
        if (idle_hook_) idle_hook_();
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
        continue;
      }
      if (queue_.empty() || queue_.top().t > t_end) break;
    } else if (queue_.empty() || queue_.top().t > t_end) {
      break;
    }
    Event ev = queue_.top();
    queue_.pop();
    now_ = std::max(now_, ev.t);
    const std::uint64_t n_before = events_processed_;
    process(ev);
    count += events_processed_ - n_before;
  }
  if (!stop_requested_) now_ = std::max(now_, t_end);
  return count;
}

void Bus::process(const Event& ev) {
  switch (ev.kind) {
    case EventKind::Fault: process_fault(ev.order); break;
    case EventKind::Deliver: process_delivery(ev.order); break;
    case EventKind::Timer: process_timer(ev.order); break;
  }
}

void Bus::process_fault(std::uint32_t fault_index) {
  const auto& f = faults_[fault_index];
  switch (f.kind) {
    case FaultSpec::Kind::CrashModule: crash_module(f.target); break;
    case FaultSpec::Kind::FreezeModule: frozen_until_[f.target] = f.activation + *f.duration; break;
    case FaultSpec::Kind::DropTopic:
    case FaultSpec::Kind::DelayTopic: break;  // evaluated by time window at publish
  }
  ++events_processed_;
  if (trace_) {
    nlohmann::ordered_json j{{"t_ns", now_.count()}, {"kind", kind_name(EventKind::Fault)},
                             {"topic", f.target},    {"pub", ""},
                             {"seq", fault_index},   {"fault", to_string(f.kind)}};
    trace_line(j.dump());
  }
}

void Bus::process_delivery(std::uint32_t sub_index) {
  auto& sub = subscriptions_[sub_index];
  if (sub.scheduled_at && *sub.scheduled_at == now_) sub.scheduled_at.reset();
  if (crashed_.contains(sub.owner)) {
    sub.queue.clear();
    return;
  }
  std::vector<Envelope> ready;
  while (!sub.queue.empty() && sub.queue.front().deliver_at <= now_) {
    ready.push_back(std::move(sub.queue.front().env));
    sub.queue.pop_front();
  }
  if (!sub.queue.empty()) {
    const SimTime at = sub.queue.front().deliver_at;
    if (!sub.scheduled_at || *sub.scheduled_at > at) {
      sub.scheduled_at = at;
      push_event(at, EventKind::Deliver, sub_index);
    }
  }
  if (is_frozen(sub.owner)) return;
  for (const auto& env : ready) {
    // Copy what the trace needs: the callback may register subscriptions and
    // invalidate `sub`.
    const std::string owner = subscriptions_[sub_index].owner;
    if (crashed_.contains(owner)) break;
    ++events_processed_;
    if (trace_) {
      nlohmann::ordered_json j{{"t_ns", now_.count()}, {"kind", kind_name(EventKind::Deliver)},
                               {"topic", env.topic},   {"pub", env.publisher_id},
                               {"seq", env.sequence},  {"sub", owner},
                               {"hash", env.payload_hash}};
      trace_line(j.dump());
    }
    auto cb = subscriptions_[sub_index].cb;
    guarded(owner, [&] { cb(env); });
  }
}

void Bus::process_timer(std::uint32_t timer_index) {
  const std::string owner = timers_[timer_index].owner;
  if (crashed_.contains(owner)) return;
  const bool one_shot = timers_[timer_index].one_shot;
  const bool frozen = is_frozen(owner);
  if (!frozen) {
    auto& t = timers_[timer_index];
    ++t.fires;
    ++events_processed_;
    if (trace_) {
      nlohmann::ordered_json j{{"t_ns", now_.count()}, {"kind", kind_name(EventKind::Timer)},
                               {"topic", ""},          {"pub", owner},
                               {"seq", t.fires}};
      trace_line(j.dump());
    }
    auto cb = t.cb;
    guarded(owner, [&] { cb(now_); });
  } else if (!one_shot) {
    ++timers_[timer_index].fires;
  }
  if (!one_shot && !crashed_.contains(owner)) schedule_next(timer_index, now_);
}

std::vector<GraphEdge> Bus::graph() const { return {edges_.begin(), edges_.end()}; }

}  // namespace racestack::bus
