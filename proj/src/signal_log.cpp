#include "racestack/signal_log.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <set>

#include "racestack/bytes.hpp"

namespace racestack::tsl {

std::string_view to_string(TslErrc c) {
  switch (c) {
    case TslErrc::DuplicateSignalName: return "DuplicateSignalName";
    case TslErrc::EmptyName: return "EmptyName";
    case TslErrc::TooManySignals: return "TooManySignals";
    case TslErrc::LengthMismatch: return "LengthMismatch";
    case TslErrc::CorruptHeader: return "CorruptHeader";
    case TslErrc::TruncatedRecord: return "TruncatedRecord";
    case TslErrc::CorruptRecord: return "CorruptRecord";
    case TslErrc::UnknownSchema: return "UnknownSchema";
    case TslErrc::IoFailure: return "IoFailure";
    case TslErrc::TopicMissing: return "TopicMissing";
    case TslErrc::SchemaMismatch: return "SchemaMismatch";
  }
  return "?";
}

TslError::TslError(TslErrc code, const std::string& what, std::optional<std::uint64_t> offset)
    : std::runtime_error(std::string(to_string(code)) + ": " + what +
                         (offset ? " at offset " + std::to_string(*offset) : std::string{})),
      code_(code),
      offset_(offset) {}

std::uint64_t schema_id_of(std::span<const std::string> names) {
  std::uint64_t h = kFnvOffset;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i > 0) h = fnv1a64(std::string_view(&kNameSeparator, 1), h);
    h = fnv1a64(names[i], h);
  }
  return h;
}

SignalSchema register_signals(std::string source_module, std::vector<std::string> names) {
  if (names.size() > std::numeric_limits<std::uint16_t>::max())
    throw TslError(TslErrc::TooManySignals, std::to_string(names.size()) + " signals");
  std::set<std::string_view> seen;
  for (const auto& n : names) {
    if (n.empty()) throw TslError(TslErrc::EmptyName, "signal name is empty");
    if (n.size() > std::numeric_limits<std::uint16_t>::max()) throw TslError(TslErrc::TooManySignals, "name too long");
    if (!seen.insert(n).second) throw TslError(TslErrc::DuplicateSignalName, n);
  }
  SignalSchema s;
  s.schema_id = schema_id_of(names);
  s.names = std::move(names);
  s.source_module = std::move(source_module);
  return s;
}

SignalFrame make_frame(const SignalSchema& schema, std::span<const double> values, SimTime stamp) {
  if (values.size() != schema.names.size()) {
    throw TslError(TslErrc::LengthMismatch, "schema has " + std::to_string(schema.names.size()) +
                                                " signals, got " + std::to_string(values.size()));
  }
  SignalFrame f;
  f.schema_id = schema.schema_id;
  f.stamp = stamp;
  f.values.assign(values.begin(), values.end());
  for (auto& v : f.values) {
    if (!std::isfinite(v)) {
      v = std::numeric_limits<double>::quiet_NaN();
      f.flagged = true;
    }
  }
  return f;
}

msg::SignalSchemaMsg to_message(const SignalSchema& s) { return {s.schema_id, s.names, s.source_module}; }
msg::SignalFrameMsg to_message(const SignalFrame& f) { return {f.schema_id, f.stamp, f.values, f.flagged}; }
SignalSchema from_message(const msg::SignalSchemaMsg& m) { return {m.schema_id, m.names, m.source_module}; }
SignalFrame from_message(const msg::SignalFrameMsg& m) { return {m.schema_id, m.stamp, m.values, m.flagged}; }

namespace {

std::vector<std::uint8_t> frame_record(RecordKind kind, const ByteWriter& body) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(kind));
  w.u32(static_cast<std::uint32_t>(body.size()));
  w.bytes(body.data());
  return w.take();
}

}  // namespace

std::vector<std::uint8_t> encode_header() {
  ByteWriter w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kVersion);
  return w.take();
}

std::vector<std::uint8_t> encode_record(const SignalSchema& s) {
  ByteWriter body;
  body.u64(s.schema_id);
  body.u16(static_cast<std::uint16_t>(s.names.size()));
  for (const auto& n : s.names) body.str16(n);
  return frame_record(RecordKind::Schema, body);
}

std::vector<std::uint8_t> encode_record(const SignalFrame& f) {
  ByteWriter body;
  body.u64(f.schema_id);
  body.u64(static_cast<std::uint64_t>(f.stamp.count()));
  for (double v : f.values) body.f64(v);
  return frame_record(RecordKind::Frame, body);
}

std::vector<std::uint8_t> encode_record(const bus::Envelope& e) {
  ByteWriter body;
  body.str16(e.topic);
  body.str16(e.publisher_id);
  body.u64(e.sequence);
  body.u64(static_cast<std::uint64_t>(e.publish_stamp.count()));
  const auto payload = e.payload ? encode(*e.payload) : std::vector<std::uint8_t>{};
  body.u16(e.payload ? static_cast<std::uint16_t>(type_of(*e.payload)) : 0);
  body.u32(static_cast<std::uint32_t>(payload.size()));
  body.bytes(payload);
  return frame_record(RecordKind::Envelope, body);
}

// --- writer -----------------------------------------------------------------

LogWriter::LogWriter(std::optional<std::size_t> capacity) : capacity_(capacity) { append(encode_header()); }

LogWriter::LogWriter(const std::filesystem::path& path, std::optional<std::size_t> capacity)
    : capacity_(capacity) {
  file_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
  if (!*file_) throw TslError(TslErrc::IoFailure, "cannot open " + path.string());
  append(encode_header());
}

void LogWriter::append(std::span<const std::uint8_t> rec) {
  if (failed_) throw TslError(TslErrc::IoFailure, "writer already failed");
  if (capacity_ && buf_.size() + rec.size() > *capacity_) {
    failed_ = true;
    throw TslError(TslErrc::IoFailure, "no space left (capacity " + std::to_string(*capacity_) + " bytes)");
  }
  buf_.insert(buf_.end(), rec.begin(), rec.end());
  if (file_) {
    file_->write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
    if (!*file_) {
      failed_ = true;
      throw TslError(TslErrc::IoFailure, "write failed");
    }
  }
}

void LogWriter::write(const SignalSchema& s) {
  append(encode_record(s));
  ++records_;
}
void LogWriter::write(const SignalFrame& f) {
  append(encode_record(f));
  ++records_;
}
void LogWriter::write(const bus::Envelope& e) {
  append(encode_record(e));
  ++records_;
}

void LogWriter::flush() {
  if (file_) file_->flush();
}

// --- reader -----------------------------------------------------------------

std::map<std::string, double> DecodedFrame::named() const {
  std::map<std::string, double> out;
  if (!schema) return out;
  for (std::size_t i = 0; i < values.size() && i < schema->names.size(); ++i) out[schema->names[i]] = values[i];
  return out;
}

LogReader::LogReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {
  const auto header = encode_header();
  const std::size_t n = std::min(bytes_.size(), kMagic.size());
  if (!std::equal(bytes_.begin(), bytes_.begin() + static_cast<std::ptrdiff_t>(n), header.begin()))
    throw TslError(TslErrc::CorruptHeader, "bad magic", 0);
  if (bytes_.size() < kHeaderSize) throw TslError(TslErrc::TruncatedRecord, "file shorter than header", 0);
  ByteReader r(std::span<const std::uint8_t>(bytes_).subspan(kMagic.size(), 2));
  if (auto v = r.u16(); v != kVersion) throw TslError(TslErrc::CorruptHeader, "unsupported version " + std::to_string(v), 0);
  pos_ = kHeaderSize;
}

LogReader LogReader::open(const std::filesystem::path& path) { return LogReader(read_file(path)); }

std::optional<Record> LogReader::next() {
  if (done_ || pos_ == bytes_.size()) return std::nullopt;
  const std::uint64_t offset = pos_;
  const std::size_t remaining = bytes_.size() - pos_;
  if (remaining < 5) {
    done_ = true;
    throw TslError(TslErrc::TruncatedRecord, "partial record header", offset);
  }
  ByteReader head(std::span<const std::uint8_t>(bytes_).subspan(pos_, 5));
  const auto kind = head.u8();
  const auto length = head.u32();
  if (kind < 1 || kind > 3) {
    done_ = true;
    throw TslError(TslErrc::CorruptRecord, "unknown record kind " + std::to_string(kind), offset);
  }
  if (remaining - 5 < length) {
    done_ = true;
    throw TslError(TslErrc::TruncatedRecord, "record body cut short", offset);
  }
  const auto body = std::span<const std::uint8_t>(bytes_).subspan(pos_ + 5, length);
  pos_ += 5 + length;

  Record rec;
  rec.kind = static_cast<RecordKind>(kind);
  rec.offset = offset;
  try {
    ByteReader r(body);
    switch (rec.kind) {
      case RecordKind::Schema: {
        auto s = std::make_shared<SignalSchema>();
        s->schema_id = r.u64();
        const auto count = r.u16();
        for (std::uint16_t i = 0; i < count; ++i) s->names.push_back(r.str16());
        if (!r.at_end()) throw DecodeError("trailing bytes in schema record");
        schemas_[s->schema_id] = s;
        rec.schema = std::move(s);
        break;
      }
      case RecordKind::Frame: {
        if (length < 16 || (length - 16) % 8 != 0) throw DecodeError("frame length not a multiple of 8");
        rec.frame.schema_id = r.u64();
        rec.frame.stamp = SimTime{static_cast<std::int64_t>(r.u64())};
        auto it = schemas_.find(rec.frame.schema_id);
        if (it == schemas_.end()) {
          throw TslError(TslErrc::UnknownSchema, "frame references unannounced schema", offset);
        }
        rec.frame.schema = it->second;
        const std::size_t count = (length - 16) / 8;
        if (count != it->second->names.size()) throw DecodeError("frame width differs from schema");
        rec.frame.values.resize(count);
        for (auto& v : rec.frame.values) {
          v = r.f64();
          rec.frame.flagged = rec.frame.flagged || std::isnan(v);
        }
        break;
      }
      case RecordKind::Envelope: {
        auto& e = rec.envelope;
        e.topic = r.str16();
        e.publisher_id = r.str16();
        e.sequence = r.u64();
        e.publish_stamp = SimTime{static_cast<std::int64_t>(r.u64())};
        const auto type = r.u16();
        if (type >= kMessageTypeCount) throw DecodeError("unknown message type");
        const auto n = r.u32();
        auto payload = decode(static_cast<MessageType>(type), r.bytes(n));
        if (!r.at_end()) throw DecodeError("trailing bytes in envelope record");
        e.payload_hash = payload_hash(payload);
        e.payload = std::make_shared<const Message>(std::move(payload));
        break;
      }
    }
  } catch (const DecodeError& err) {
    done_ = true;
    throw TslError(TslErrc::CorruptRecord, err.what(), offset);
  }
  return rec;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TslError(TslErrc::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<Record> read_all(LogReader& reader) {
  std::vector<Record> out;
  while (auto r = reader.next()) out.push_back(std::move(*r));
  return out;
}

// --- recorder ---------------------------------------------------------------

Recorder::Recorder(bus::Bus& bus, LogWriter& writer, const std::vector<std::string>& topics, Options opts)
    : bus_(&bus), writer_(&writer), opts_(std::move(opts)) {
  std::vector<bus::TopicHandle> handles;
  for (const auto& t : topics) {
    auto h = bus.find_topic(t);
    if (!h) throw TslError(TslErrc::TopicMissing, t);
    handles.push_back(*h);
  }
  for (auto h : handles) {
    bus.subscribe(h, [this](const bus::Envelope& env) { on_envelope(env); }, opts_.module_id, opts_.depth);
  }
  if (opts_.status_topic) {
    status_pub_ = bus.advertise(bus.topic(*opts_.status_topic), opts_.module_id);
    bus.schedule_timer(opts_.heartbeat, [this](SimTime now) { heartbeat(now); }, opts_.module_id);
  }
}

void Recorder::on_envelope(const bus::Envelope& env) {
  if (writer_->failed()) return;
  try {
    if (auto s = env.get<msg::SignalSchemaMsg>()) {
      writer_->write(from_message(*s));
    } else if (auto f = env.get<msg::SignalFrameMsg>()) {
      writer_->write(from_message(*f));
    } else {
      writer_->write(env);
    }
  } catch (const TslError& e) {
    if (e.code() != TslErrc::IoFailure) throw;
    failure_ = e.what();
  }
}

void Recorder::heartbeat(SimTime now) {
  msg::ModuleStatus st;
  st.module_id = opts_.module_id;
  st.stamp = now;
  if (writer_->failed()) {
    st.level = DiagnosticLevel::Error;
    st.detail = failure_.empty() ? "IoFailure" : failure_;
  }
  bus_->publish(*status_pub_, st);
}

// --- replay -----------------------------------------------------------------

std::size_t replay(std::span<const std::uint8_t> log, bus::Bus& bus) {
  LogReader reader({log.begin(), log.end()});
  std::vector<bus::Envelope> envs;
  while (true) {
    std::optional<Record> r;
    try {
      r = reader.next();
    } catch (const TslError& e) {
      if (e.code() == TslErrc::UnknownSchema) continue;  // frames are not replayed
      throw;
    }
    if (!r) break;
    if (r->kind == RecordKind::Envelope) envs.push_back(std::move(r->envelope));
  }
  for (const auto& e : envs) {
    auto h = bus.find_topic(e.topic);
    if (!h) throw TslError(TslErrc::TopicMissing, e.topic);
    const auto expected = bus.spec(*h).type;
    if (type_of(*e.payload) != expected) {
      throw TslError(TslErrc::SchemaMismatch, e.topic + " is " + std::string(to_string(expected)) +
                                                  ", log has " + std::string(to_string(type_of(*e.payload))));
    }
  }
  std::stable_sort(envs.begin(), envs.end(),
                   [](const bus::Envelope& a, const bus::Envelope& b) { return a.publish_stamp < b.publish_stamp; });
  for (auto& e : envs) {
    const SimTime at = e.publish_stamp;
    bus.schedule_at(at, [&bus, env = std::move(e)](SimTime) { bus.republish(env); }, "replay");
  }
  return envs.size();
}

}  // namespace racestack::tsl
