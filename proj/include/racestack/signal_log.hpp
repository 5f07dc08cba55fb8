#pragma once

// Dynamic-schema telemetry log ("TSL").
//
// File layout, little-endian:
//   "TSL1" u16 version
//   record*   = u8 kind, u32 length, payload[length]
//   Schema    = u64 id, u16 count, count * (u16 len, utf8)
//   Frame     = u64 id, u64 stamp_ns, f64[count]
//   Envelope  = str16 topic, str16 publisher, u64 seq, u64 stamp_ns, u16 type, u32 len, payload

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "racestack/bus.hpp"
#include "racestack/messages.hpp"
#include "racestack/sim_time.hpp"

namespace racestack::tsl {

enum class TslErrc {
  DuplicateSignalName,
  EmptyName,
  TooManySignals,
  LengthMismatch,
  CorruptHeader,
  TruncatedRecord,
  CorruptRecord,
  UnknownSchema,
  IoFailure,
  TopicMissing,
  SchemaMismatch,
};

std::string_view to_string(TslErrc c);

class TslError : public std::runtime_error {
 public:
  TslError(TslErrc code, const std::string& what, std::optional<std::uint64_t> offset = std::nullopt);
  TslErrc code() const noexcept { return code_; }
  // Byte offset of the offending record, when the error concerns one.
  std::optional<std::uint64_t> offset() const noexcept { return offset_; }

 private:
  TslErrc code_;
  std::optional<std::uint64_t> offset_;
};

inline constexpr std::string_view kMagic = "TSL1";
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 6;
inline constexpr char kNameSeparator = '\x1f';
inline constexpr SimTime kReannouncePeriod = std::chrono::seconds(1);

enum class RecordKind : std::uint8_t { Schema = 1, Frame = 2, Envelope = 3 };

struct SignalSchema {
  std::uint64_t schema_id = 0;
  std::vector<std::string> names;
  std::string source_module;
};

struct SignalFrame {
  std::uint64_t schema_id = 0;
  SimTime stamp{0};
  std::vector<double> values;
  bool flagged = false;  // a non-finite input was replaced by NaN
};

std::uint64_t schema_id_of(std::span<const std::string> names);

// Validates names and computes the id.
SignalSchema register_signals(std::string source_module, std::vector<std::string> names);

// Non-finite values become quiet NaN and set the frame flag.
SignalFrame make_frame(const SignalSchema& schema, std::span<const double> values, SimTime stamp);

msg::SignalSchemaMsg to_message(const SignalSchema& s);
msg::SignalFrameMsg to_message(const SignalFrame& f);
SignalSchema from_message(const msg::SignalSchemaMsg& m);
SignalFrame from_message(const msg::SignalFrameMsg& m);

std::vector<std::uint8_t> encode_header();
std::vector<std::uint8_t> encode_record(const SignalSchema& s);
std::vector<std::uint8_t> encode_record(const SignalFrame& f);
std::vector<std::uint8_t> encode_record(const bus::Envelope& e);

// Append-only sink. Holds the whole log in memory and mirrors it to a file when
// a path is given. `capacity` (bytes) simulates a full disk: a write that would
// exceed it throws IoFailure and the writer stays failed.
class LogWriter {
 public:
  explicit LogWriter(std::optional<std::size_t> capacity = std::nullopt);
  explicit LogWriter(const std::filesystem::path& path, std::optional<std::size_t> capacity = std::nullopt);

  void write(const SignalSchema& s);
  void write(const SignalFrame& f);
  void write(const bus::Envelope& e);

  void flush();
  bool failed() const { return failed_; }
  std::size_t records() const { return records_; }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  void append(std::span<const std::uint8_t> rec);

  std::vector<std::uint8_t> buf_;
  std::optional<std::size_t> capacity_;
  std::unique_ptr<std::ofstream> file_;
  std::size_t records_ = 0;
  bool failed_ = false;
};

struct DecodedFrame {
  SimTime stamp{0};
  std::uint64_t schema_id = 0;
  std::shared_ptr<const SignalSchema> schema;
  std::vector<double> values;
  bool flagged = false;  // any value is NaN

  std::map<std::string, double> named() const;
};

struct Record {
  RecordKind kind = RecordKind::Schema;
  std::uint64_t offset = 0;
  std::shared_ptr<const SignalSchema> schema;  // Schema
  DecodedFrame frame;                          // Frame
  bus::Envelope envelope;                      // Envelope
};

// Sequential decoder. next() returns records in file order and nullopt at end.
// UnknownSchema is thrown for a frame whose schema was not announced earlier;
// the reader has already skipped that record, so decoding can continue.
// TruncatedRecord and CorruptRecord are terminal.
class LogReader {
 public:
  explicit LogReader(std::vector<std::uint8_t> bytes);
  static LogReader open(const std::filesystem::path& path);

  std::optional<Record> next();
  const std::map<std::uint64_t, std::shared_ptr<const SignalSchema>>& schemas() const { return schemas_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  bool done_ = false;
  std::map<std::uint64_t, std::shared_ptr<const SignalSchema>> schemas_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// Drains a reader, collecting every record. Throws on the first error.
std::vector<Record> read_all(LogReader& reader);

// Taps topics on a bus and appends every delivered envelope. /tsl schema and
// frame messages are stored as Schema/Frame records so tslcat can decode them.
// With a status topic it heartbeats a ModuleStatus (ERROR after an IoFailure).
class Recorder {
 public:
  struct Options {
    std::string module_id = "telemetry_recorder";
    std::optional<std::string> status_topic;
    SimTime heartbeat{std::chrono::milliseconds(20)};
    std::size_t depth = 128;
  };

  Recorder(bus::Bus& bus, LogWriter& writer, const std::vector<std::string>& topics, Options opts);
  Recorder(bus::Bus& bus, LogWriter& writer, const std::vector<std::string>& topics)
      : Recorder(bus, writer, topics, Options{}) {}

  bool failed() const { return writer_->failed(); }
  const std::string& failure() const { return failure_; }

 private:
  void on_envelope(const bus::Envelope& env);
  void heartbeat(SimTime now);

  bus::Bus* bus_;
  LogWriter* writer_;
  Options opts_;
  std::optional<bus::PublisherHandle> status_pub_;
  std::string failure_;
};

// Validates every Envelope record against the bus (TopicMissing, SchemaMismatch)
// before scheduling anything, then re-publishes each at its recorded stamp.
// Returns the number of envelopes scheduled.
std::size_t replay(std::span<const std::uint8_t> log, bus::Bus& bus);

}  // namespace racestack::tsl
