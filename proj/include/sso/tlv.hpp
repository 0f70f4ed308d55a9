#pragma once

#include <cstdint>
#include <string>

#include "sso/bytes.hpp"

// Tag-length-value fields shared by certificates, wire payloads, key files
// and the user database: 2-byte big-endian tag, 4-byte big-endian length,
// raw value bytes. Readers are strict: fields must appear in the expected
// order, and trailing bytes are rejected.
namespace sso::tlv {

class Writer {
 public:
  Writer& put(std::uint16_t tag, ByteView value);
  Writer& put_string(std::uint16_t tag, std::string_view value);
  Writer& put_u8(std::uint16_t tag, std::uint8_t value);
  Writer& put_i64(std::uint16_t tag, std::int64_t value);

  const Bytes& bytes() const { return out_; }
  Bytes finish() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(ByteView in) : in_(in) {}

  // Each accessor throws Error(kMalformed) if the next field is missing,
  // carries a different tag, or overruns the buffer.
  ByteView expect(std::uint16_t tag);
  ByteView expect(std::uint16_t tag, std::size_t exact_len);
  std::string expect_string(std::uint16_t tag, std::size_t max_len);
  std::uint8_t expect_u8(std::uint16_t tag);
  std::int64_t expect_i64(std::uint16_t tag);

  bool at_end() const { return pos_ == in_.size(); }
  // Throws Error(kMalformed) if unread bytes remain.
  void finish() const;

 private:
  ByteView in_;
  std::size_t pos_ = 0;
};

}  // namespace sso::tlv
