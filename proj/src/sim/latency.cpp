#include "racestack/sim/latency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "racestack/signal_log.hpp"

namespace racestack::sim {

namespace {

__extension__ using i128 = __int128;

class StatsAccumulator {
 public:
  void add(std::int64_t v) {
    ++count_;
    sum_ += v;
    min_ = std::min(min_, v);
    max_ = std::max(max_, v);
  }
  LatencyStats done() const {
    LatencyStats s;
    s.count = count_;
    if (count_ == 0) return s;
    s.mean_ns = static_cast<double>(sum_) / static_cast<double>(count_);
    s.min_ns = min_;
    s.max_ns = max_;
    return s;
  }

 private:
  std::uint64_t count_ = 0;
  i128 sum_ = 0;
  std::int64_t min_ = std::numeric_limits<std::int64_t>::max();
  std::int64_t max_ = std::numeric_limits<std::int64_t>::min();
};

struct Moments {
  std::uint64_t n = 0;
  i128 sum = 0;
  i128 sum_sq = 0;
  std::int64_t max_abs = 0;
};

std::int64_t deviation(std::span<const SimTime> stamps, std::size_t i, SimTime period) {
  return (stamps[i + 1] - stamps[i] - period).count();
}

InterArrival finish(const Moments& m, SimTime period) {
  InterArrival r;
  r.reference_period_ns = period.count();
  r.samples = m.n;
  r.max_abs_ns = m.max_abs;
  if (m.n == 0) return r;
  const auto n = static_cast<i128>(m.n);
  r.mean_ns = static_cast<double>(static_cast<long double>(m.sum) / static_cast<long double>(n));
  // n^2 var = n sum_sq - sum^2, exact in 128-bit for any realistic run.
  const i128 scaled = n * m.sum_sq - m.sum * m.sum;
  r.std_ns = static_cast<double>(std::sqrt(static_cast<long double>(scaled)) / static_cast<long double>(n));
  return r;
}

constexpr std::size_t kChunk = 1024;

}  // namespace

InterArrival inter_arrival_serial(std::span<const SimTime> stamps, SimTime period) {
  Moments m;
  for (std::size_t i = 0; i + 1 < stamps.size(); ++i) {
    const std::int64_t d = deviation(stamps, i, period);
    ++m.n;
    m.sum += d;
    m.sum_sq += static_cast<i128>(d) * d;
    m.max_abs = std::max(m.max_abs, d < 0 ? -d : d);
  }
  return finish(m, period);
}

InterArrival inter_arrival_parallel(std::span<const SimTime> stamps, SimTime period) {
  const std::size_t n = stamps.size() < 2 ? 0 : stamps.size() - 1;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<Moments> partial(chunks);
  const auto nchunks = static_cast<std::int64_t>(chunks);
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < nchunks; ++c) {
    Moments m;
    const std::size_t lo = static_cast<std::size_t>(c) * kChunk;
    const std::size_t hi = std::min(n, lo + kChunk);
    for (std::size_t i = lo; i < hi; ++i) {
      const std::int64_t d = deviation(stamps, i, period);
      ++m.n;
      m.sum += d;
      m.sum_sq += static_cast<i128>(d) * d;
      m.max_abs = std::max(m.max_abs, d < 0 ? -d : d);
    }
    partial[static_cast<std::size_t>(c)] = m;
  }
  Moments total;
  for (const auto& m : partial) {
    total.n += m.n;
    total.sum += m.sum;
    total.sum_sq += m.sum_sq;
    total.max_abs = std::max(total.max_abs, m.max_abs);
  }
  return finish(total, period);
}

ChainLatencyReport analyze_chain(std::span<const StampRecord> records, const std::vector<std::string>& chain,
                                 SimTime reference_period) {
  if (chain.empty()) throw SimError(SimErrc::MissingTopic, "empty chain");
  std::map<std::string, std::vector<SimTime>, std::less<>> stamps;
  for (const auto& t : chain) stamps[t];
  for (const auto& r : records) {
    auto it = stamps.find(r.topic);
    if (it != stamps.end()) it->second.push_back(r.stamp);
  }
  for (const auto& t : chain) {
    auto& v = stamps[t];
    if (v.empty()) throw SimError(SimErrc::MissingTopic, t);
    std::stable_sort(v.begin(), v.end());
  }
  const auto& final_stamps = stamps[chain.back()];
  if (final_stamps.size() < kMinChainSamples)
    throw SimError(SimErrc::InsufficientSamples, chain.back() + " has " + std::to_string(final_stamps.size()) +
                                                     " envelopes, need " + std::to_string(kMinChainSamples));

  // Causal match: the most recent upstream envelope published no later than the downstream one.
  auto cause = [&](const std::string& upstream, SimTime t) -> std::optional<SimTime> {
    const auto& up = stamps[upstream];
    auto it = std::upper_bound(up.begin(), up.end(), t);
    if (it == up.begin()) return std::nullopt;
    return *std::prev(it);
  };

  ChainLatencyReport rep;
  rep.chain = chain;
  for (std::size_t h = 0; h + 1 < chain.size(); ++h) {
    StatsAccumulator acc;
    for (SimTime t : stamps[chain[h + 1]]) {
      if (auto u = cause(chain[h], t)) acc.add((t - *u).count());
    }
    rep.hops.push_back({chain[h], chain[h + 1], acc.done()});
  }
  StatsAccumulator e2e;
  for (SimTime t : final_stamps) {
    std::optional<SimTime> cur = t;
    for (std::size_t h = chain.size() - 1; h > 0 && cur; --h) cur = cause(chain[h - 1], *cur);
    if (cur) e2e.add((t - *cur).count());
  }
  rep.end_to_end = e2e.done();
  rep.inter_arrival = inter_arrival_parallel(final_stamps, reference_period);
  return rep;
}

ChainLatencyReport analyze_log(std::span<const std::uint8_t> log, const std::vector<std::string>& chain,
                               SimTime reference_period) {
  tsl::LogReader reader(std::vector<std::uint8_t>(log.begin(), log.end()));
  std::vector<StampRecord> recs;
  for (;;) {
    std::optional<tsl::Record> r;
    try {
      r = reader.next();
    } catch (const tsl::TslError& e) {
      if (e.code() == tsl::TslErrc::UnknownSchema) continue;
      throw;
    }
    if (!r) break;
    if (r->kind != tsl::RecordKind::Envelope) continue;
    const auto& e = r->envelope;
    recs.push_back({e.topic, e.publisher_id, e.sequence, e.publish_stamp});
  }
  return analyze_chain(recs, chain, reference_period);
}

LatencyProbe::LatencyProbe(bus::Bus& bus, std::vector<std::string> chain, SimTime reference_period)
    : chain_(std::move(chain)), period_(reference_period) {
  for (const auto& t : chain_) {
    bus.subscribe(
        bus.topic(t),
        [this](const bus::Envelope& env) {
          records_.push_back({env.topic, env.publisher_id, env.sequence, env.publish_stamp});
        },
        "latency_probe", 128);
  }
}

ChainLatencyReport LatencyProbe::report() const { return analyze_chain(records_, chain_, period_); }

nlohmann::ordered_json ChainLatencyReport::to_json() const {
  auto stats = [](const LatencyStats& s) {
    return nlohmann::ordered_json{
        {"count", s.count}, {"mean_ns", s.mean_ns}, {"min_ns", s.min_ns}, {"max_ns", s.max_ns}};
  };
  nlohmann::ordered_json hop_list = nlohmann::ordered_json::array();
  for (const auto& h : hops) hop_list.push_back({{"from", h.from}, {"to", h.to}, {"latency", stats(h.latency)}});
  return {{"chain", chain},
          {"hops", std::move(hop_list)},
          {"end_to_end", stats(end_to_end)},
          {"inter_arrival",
           {{"reference_period_ns", inter_arrival.reference_period_ns},
            {"samples", inter_arrival.samples},
            {"mean_ns", inter_arrival.mean_ns},
            {"max_abs_deviation_ns", inter_arrival.max_abs_ns},
            {"std_deviation_ns", inter_arrival.std_ns}}}};
}

}  // namespace racestack::sim
