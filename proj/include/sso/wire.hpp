#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "sso/bytes.hpp"
#include "sso/crypto.hpp"

// Framing for the eight handshake messages plus application data.
//
//   offset  size  field
//   0       2     magic 0x53 0x4F ("SO")
//   2       1     version: crypto suite identifier
//   3       1     message type
//   4       4     payload length, big-endian, <= 1 MiB
//   8       n     payload: TLV fields in fixed order
namespace sso::wire {

inline constexpr std::uint8_t kMagic0 = 0x53;
inline constexpr std::uint8_t kMagic1 = 0x4F;
inline constexpr std::size_t kHeaderSize = 8;
inline constexpr std::size_t kMaxPayload = 1u << 20;

// The version byte names the crypto suite. Both use SHA-256 and RSA; they
// differ in the session cipher.
enum class Suite : std::uint8_t {
  kModern = 0x01,     // SHA-256 + AES-256-GCM
  kLegacy3Des = 0x02, // SHA-256 + 3DES-CBC/HMAC-SHA256
};

crypto::SymAlgorithm session_cipher(Suite suite);
std::optional<Suite> suite_from_name(std::string_view name);
std::string_view suite_name(Suite suite);

enum class MsgType : std::uint8_t {
  kConnRequest = 0x11,    // M1
  kConnAccept = 0x12,     // M2
  kEnroll = 0x13,         // M3
  kCredentials = 0x14,    // M4
  kAccessRequest = 0x21,  // R1
  kChallenge = 0x22,      // R2
  kAuthResponse = 0x23,   // R3
  kSessionGrant = 0x24,   // R4
  kAppData = 0x31,
};

bool is_known_type(std::uint8_t t);
std::string_view short_name(MsgType t);  // "M1".."R4", "APP"
std::optional<MsgType> type_from_short_name(std::string_view name);

// Phase 1
struct ConnRequest {
  std::string username;
  friend bool operator==(const ConnRequest&, const ConnRequest&) = default;
};
struct ConnAccept {
  crypto::Digest nonce_hash;  // h(N)
  friend bool operator==(const ConnAccept&, const ConnAccept&) = default;
};
struct Enroll {
  crypto::SealedBox sealed;  // over EnrollPayload
  friend bool operator==(const Enroll&, const Enroll&) = default;
};
struct Credentials {
  Bytes certificate;
  Bytes encrypted_secret_key;  // sym ciphertext under K_AB
  crypto::Nonce nonce;
  crypto::Signature signature;  // over certificate || encrypted_secret_key || nonce
  friend bool operator==(const Credentials&, const Credentials&) = default;
};

// Phase 2
struct AccessRequest {
  std::string client_hint;
  friend bool operator==(const AccessRequest&, const AccessRequest&) = default;
};
struct Challenge {
  crypto::Nonce nonce;
  Bytes server_certificate;
  friend bool operator==(const Challenge&, const Challenge&) = default;
};
struct AuthResponse {
  Bytes certificate;
  crypto::Signature signature;  // over h(N')
  friend bool operator==(const AuthResponse&, const AuthResponse&) = default;
};
struct SessionGrant {
  crypto::SealedBox sealed;     // over GrantPayload
  crypto::Signature signature;  // over sealed.encode()
  friend bool operator==(const SessionGrant&, const SessionGrant&) = default;
};

struct AppData {
  Bytes ciphertext;
  friend bool operator==(const AppData&, const AppData&) = default;
};

using Message = std::variant<ConnRequest, ConnAccept, Enroll, Credentials, AccessRequest,
                             Challenge, AuthResponse, SessionGrant, AppData>;

MsgType type_of(const Message& m);

struct Frame {
  Suite suite = Suite::kModern;
  MsgType type = MsgType::kConnRequest;
  Bytes payload;
  friend bool operator==(const Frame&, const Frame&) = default;
};

Bytes encode_payload(const Message& m);
// Throws Error(kMalformed).
Message decode_payload(MsgType type, ByteView payload);

// Throws Error(kOversize) when the payload exceeds 1 MiB.
Bytes encode_frame(const Frame& f);
Bytes encode_msg(const Message& m, Suite suite = Suite::kModern);
Frame to_frame(const Message& m, Suite suite = Suite::kModern);

struct NeedMoreData {
  std::size_t missing = 0;
};

// Parses one frame from the front of `in`. Returns NeedMoreData when `in`
// holds only a prefix; on success `consumed` is the frame's total size.
// Throws Error with kBadMagic, kUnknownVersion, kUnknownType or kOversize.
std::variant<Frame, NeedMoreData> parse_frame(ByteView in, std::size_t& consumed);

// Exactly one frame carrying a message of the expected suite.
// Extra bytes after the frame are kLengthMismatch; a wrong suite is
// kUnknownVersion; payload faults are kMalformed.
std::variant<Message, NeedMoreData> decode_msg(ByteView in, Suite suite = Suite::kModern);

// Incremental reassembly for a single byte stream.
class FrameReader {
 public:
  void feed(ByteView chunk);
  // Next complete frame, if buffered. Throws on framing errors.
  std::optional<Frame> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  Bytes buf_;
  std::size_t pos_ = 0;
};

class ByteStream {
 public:
  virtual ~ByteStream() = default;
  // Blocks until at least one byte is read; returns 0 on orderly close.
  virtual std::size_t read_some(std::span<std::uint8_t> out) = 0;
  virtual void write_all(ByteView data) = 0;
};

// Frame-level view over a ByteStream. Owned by one task.
class FrameStream {
 public:
  explicit FrameStream(ByteStream& stream) : stream_(stream) {}
  // nullopt on orderly close at a frame boundary; Error(kTruncated) if the
  // stream closes mid-frame.
  std::optional<Frame> read();
  void write(const Frame& f);

 private:
  ByteStream& stream_;
  FrameReader reader_;
};

std::optional<Frame> read_frame(FrameStream& s);
void write_frame(FrameStream& s, const Frame& f);

}  // namespace sso::wire
