#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sso {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(ByteView b) { return std::string(b.begin(), b.end()); }

Bytes concat(std::initializer_list<ByteView> parts);

std::string to_hex(ByteView b);
Bytes from_hex(std::string_view hex);

std::string base64_encode(ByteView b);
// Throws Error(kMalformed) on invalid input.
Bytes base64_decode(std::string_view text);

// True iff needle occurs as a contiguous run inside haystack.
bool contains(ByteView haystack, ByteView needle);

// Overwrites the buffer in a way the optimizer may not elide.
void secure_wipe(std::span<std::uint8_t> b) noexcept;
void secure_wipe(std::string& s) noexcept;

void put_u16(Bytes& out, std::uint16_t v);
void put_u32(Bytes& out, std::uint32_t v);
void put_u64(Bytes& out, std::uint64_t v);
std::uint16_t get_u16(ByteView in);
std::uint32_t get_u32(ByteView in);
std::uint64_t get_u64(ByteView in);

}  // namespace sso
