#pragma once

// Chain latency and inter-arrival analysis over enforced publish stamps. The
// same function serves recorded logs and the online probe, so both agree.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "racestack/bus.hpp"
#include "racestack/sim/error.hpp"

namespace racestack::sim {

struct StampRecord {
  std::string topic;
  std::string publisher;
  std::uint64_t sequence = 0;
  SimTime stamp{0};
};

struct LatencyStats {
  std::uint64_t count = 0;
  double mean_ns = 0.0;
  std::int64_t min_ns = 0;
  std::int64_t max_ns = 0;
  friend bool operator==(const LatencyStats&, const LatencyStats&) = default;
};

struct HopReport {
  std::string from;
  std::string to;
  LatencyStats latency;
  friend bool operator==(const HopReport&, const HopReport&) = default;
};

// Deviation of consecutive final-topic intervals from the reference period.
struct InterArrival {
  std::int64_t reference_period_ns = 0;
  std::uint64_t samples = 0;  // number of intervals
  double mean_ns = 0.0;
  std::int64_t max_abs_ns = 0;
  double std_ns = 0.0;  // population std about the mean
  friend bool operator==(const InterArrival&, const InterArrival&) = default;
};

struct ChainLatencyReport {
  std::vector<std::string> chain;
  std::vector<HopReport> hops;
  LatencyStats end_to_end;
  InterArrival inter_arrival;
  friend bool operator==(const ChainLatencyReport&, const ChainLatencyReport&) = default;

  nlohmann::ordered_json to_json() const;
};

inline constexpr std::size_t kMinChainSamples = 100;

// Throws MissingTopic (a chain topic has no envelopes) and InsufficientSamples
// (fewer than kMinChainSamples envelopes on the final topic).
ChainLatencyReport analyze_chain(std::span<const StampRecord> records, const std::vector<std::string>& chain,
                                 SimTime reference_period);

ChainLatencyReport analyze_log(std::span<const std::uint8_t> log, const std::vector<std::string>& chain,
                               SimTime reference_period);

// Interval deviations are whole nanoseconds, so the moments are exact integer
// sums; the parallel reduction uses fixed chunks and gives the serial result.
InterArrival inter_arrival_serial(std::span<const SimTime> stamps, SimTime reference_period);
InterArrival inter_arrival_parallel(std::span<const SimTime> stamps, SimTime reference_period);

// Collects stamps of the chain topics during a run.
class LatencyProbe {
 public:
  LatencyProbe(bus::Bus& bus, std::vector<std::string> chain, SimTime reference_period);
  ChainLatencyReport report() const;
  const std::vector<StampRecord>& records() const { return records_; }

 private:
  std::vector<std::string> chain_;
  SimTime period_;
  std::vector<StampRecord> records_;
};

}  // namespace racestack::sim
