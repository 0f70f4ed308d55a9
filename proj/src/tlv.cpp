#include "sso/tlv.hpp"

#include <fmt/format.h>

#include "sso/error.hpp"

namespace sso::tlv {

Writer& Writer::put(std::uint16_t tag, ByteView value) {
  if (value.size() > 0xFFFFFFFFu) throw Error(Errc::kEncoding, "field too large");
  put_u16(out_, tag);
  put_u32(out_, static_cast<std::uint32_t>(value.size()));
  out_.insert(out_.end(), value.begin(), value.end());
  return *this;
}

Writer& Writer::put_string(std::uint16_t tag, std::string_view value) {
  return put(tag, ByteView(reinterpret_cast<const std::uint8_t*>(value.data()), value.size()));
}

Writer& Writer::put_u8(std::uint16_t tag, std::uint8_t value) {
  return put(tag, ByteView(&value, 1));
}

Writer& Writer::put_i64(std::uint16_t tag, std::int64_t value) {
  Bytes b;
  put_u64(b, static_cast<std::uint64_t>(value));
  return put(tag, b);
}

ByteView Reader::expect(std::uint16_t tag) {
  if (in_.size() - pos_ < 6) {
    throw Error(Errc::kMalformed, fmt::format("missing field 0x{:04x}", tag));
  }
  std::uint16_t got = get_u16(in_.subspan(pos_, 2));
  if (got != tag) {
    throw Error(Errc::kMalformed,
                fmt::format("expected field 0x{:04x}, found 0x{:04x}", tag, got));
  }
  std::uint32_t len = get_u32(in_.subspan(pos_ + 2, 4));
  if (len > in_.size() - pos_ - 6) {
    throw Error(Errc::kMalformed, fmt::format("field 0x{:04x} overruns buffer", tag));
  }
  ByteView value = in_.subspan(pos_ + 6, len);
  pos_ += 6 + len;
  return value;
}

ByteView Reader::expect(std::uint16_t tag, std::size_t exact_len) {
  ByteView v = expect(tag);
  if (v.size() != exact_len) {
    throw Error(Errc::kMalformed, fmt::format("field 0x{:04x} has length {}, want {}", tag,
                                              v.size(), exact_len));
  }
  return v;
}

std::string Reader::expect_string(std::uint16_t tag, std::size_t max_len) {
  ByteView v = expect(tag);
  if (v.size() > max_len) {
    throw Error(Errc::kMalformed, fmt::format("field 0x{:04x} longer than {}", tag, max_len));
  }
  return to_string(v);
}

std::uint8_t Reader::expect_u8(std::uint16_t tag) { return expect(tag, 1)[0]; }

std::int64_t Reader::expect_i64(std::uint16_t tag) {
  return static_cast<std::int64_t>(get_u64(expect(tag, 8)));
}

void Reader::finish() const {
  if (!at_end()) {
    throw Error(Errc::kMalformed, fmt::format("{} trailing bytes", in_.size() - pos_));
  }
}

}  // namespace sso::tlv
