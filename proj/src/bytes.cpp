#include "racestack/bytes.hpp"

#include <limits>

namespace racestack {

void ByteWriter::str16(std::string_view s) {
  if (s.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw std::length_error("string too long for u16 length prefix");
  }
  u16(static_cast<std::uint16_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

std::uint64_t ByteReader::get(int n) {
  if (remaining() < static_cast<std::size_t>(n)) throw DecodeError("unexpected end of buffer");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += static_cast<std::size_t>(n);
  return v;
}

bool ByteReader::boolean() {
  auto v = u8();
  if (v > 1) throw DecodeError("invalid boolean byte");
  return v == 1;
}

std::string ByteReader::str16() {
  auto n = u16();
  auto b = bytes(n);
  return {b.begin(), b.end()};
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  if (remaining() < n) throw DecodeError("unexpected end of buffer");
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

}  // namespace racestack
