#include "sso/wire.hpp"

#include <fmt/format.h>

#include "sso/error.hpp"
#include "sso/tlv.hpp"

namespace sso::wire {

namespace {

constexpr std::size_t kMaxUsername = 255;
constexpr std::size_t kMaxSignature = 512;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

crypto::SealedBox sealed_field(ByteView v) { return crypto::SealedBox::decode(v); }

crypto::Signature signature_field(ByteView v) {
  if (v.empty() || v.size() > kMaxSignature) throw Error(Errc::kMalformed, "bad signature length");
  return crypto::Signature{Bytes(v.begin(), v.end())};
}

Bytes bytes_field(ByteView v) { return Bytes(v.begin(), v.end()); }

}  // namespace

crypto::SymAlgorithm session_cipher(Suite suite) {
  return suite == Suite::kLegacy3Des ? crypto::SymAlgorithm::kLegacy3Des
                                     : crypto::SymAlgorithm::kModernAead;
}

std::optional<Suite> suite_from_name(std::string_view name) {
  if (name == "modern" || name == "modern-aead") return Suite::kModern;
  if (name == "legacy-3des") return Suite::kLegacy3Des;
  return std::nullopt;
}

std::string_view suite_name(Suite suite) {
  return suite == Suite::kLegacy3Des ? "legacy-3des" : "modern-aead";
}

bool is_known_type(std::uint8_t t) {
  switch (t) {
    case 0x11: case 0x12: case 0x13: case 0x14:
    case 0x21: case 0x22: case 0x23: case 0x24:
    case 0x31:
      return true;
    default:
      return false;
  }
}

std::string_view short_name(MsgType t) {
  switch (t) {
    case MsgType::kConnRequest: return "M1";
    case MsgType::kConnAccept: return "M2";
    case MsgType::kEnroll: return "M3";
    case MsgType::kCredentials: return "M4";
    case MsgType::kAccessRequest: return "R1";
    case MsgType::kChallenge: return "R2";
    case MsgType::kAuthResponse: return "R3";
    case MsgType::kSessionGrant: return "R4";
    case MsgType::kAppData: return "APP";
  }
  return "?";
}

std::optional<MsgType> type_from_short_name(std::string_view name) {
  for (std::uint8_t t : {0x11, 0x12, 0x13, 0x14, 0x21, 0x22, 0x23, 0x24, 0x31}) {
    if (short_name(static_cast<MsgType>(t)) == name) return static_cast<MsgType>(t);
  }
  return std::nullopt;
}

MsgType type_of(const Message& m) {
  return std::visit(Overloaded{
                        [](const ConnRequest&) { return MsgType::kConnRequest; },
                        [](const ConnAccept&) { return MsgType::kConnAccept; },
                        [](const Enroll&) { return MsgType::kEnroll; },
                        [](const Credentials&) { return MsgType::kCredentials; },
                        [](const AccessRequest&) { return MsgType::kAccessRequest; },
                        [](const Challenge&) { return MsgType::kChallenge; },
                        [](const AuthResponse&) { return MsgType::kAuthResponse; },
                        [](const SessionGrant&) { return MsgType::kSessionGrant; },
                        [](const AppData&) { return MsgType::kAppData; },
                    },
                    m);
}

Bytes encode_payload(const Message& m) {
  tlv::Writer w;
  std::visit(Overloaded{
                 [&](const ConnRequest& x) { w.put_string(1, x.username); },
                 [&](const ConnAccept& x) { w.put(1, x.nonce_hash.view()); },
                 [&](const Enroll& x) { w.put(1, x.sealed.encode()); },
                 [&](const Credentials& x) {
                   w.put(1, x.certificate)
                       .put(2, x.encrypted_secret_key)
                       .put(3, x.nonce.view())
                       .put(4, x.signature.bytes);
                 },
                 [&](const AccessRequest& x) { w.put_string(1, x.client_hint); },
                 [&](const Challenge& x) { w.put(1, x.nonce.view()).put(2, x.server_certificate); },
                 [&](const AuthResponse& x) { w.put(1, x.certificate).put(2, x.signature.bytes); },
                 [&](const SessionGrant& x) { w.put(1, x.sealed.encode()).put(2, x.signature.bytes); },
                 [&](const AppData& x) { w.put(1, x.ciphertext); },
             },
             m);
  return w.finish();
}

Message decode_payload(MsgType type, ByteView payload) {
  tlv::Reader r(payload);
  Message out;
  switch (type) {
    case MsgType::kConnRequest: {
      ConnRequest x{r.expect_string(1, kMaxUsername)};
      if (x.username.empty()) throw Error(Errc::kMalformed, "empty username");
      out = std::move(x);
      break;
    }
    case MsgType::kConnAccept:
      out = ConnAccept{crypto::Digest::from_bytes(r.expect(1, crypto::kDigestSize))};
      break;
    case MsgType::kEnroll:
      out = Enroll{sealed_field(r.expect(1))};
      break;
    case MsgType::kCredentials: {
      Credentials x;
      x.certificate = bytes_field(r.expect(1));
      x.encrypted_secret_key = bytes_field(r.expect(2));
      x.nonce = crypto::Nonce::from_bytes(r.expect(3, crypto::kNonceSize));
      x.signature = signature_field(r.expect(4));
      out = std::move(x);
      break;
    }
    case MsgType::kAccessRequest:
      out = AccessRequest{r.expect_string(1, kMaxUsername)};
      break;
    case MsgType::kChallenge: {
      Challenge x;
      x.nonce = crypto::Nonce::from_bytes(r.expect(1, crypto::kNonceSize));
      x.server_certificate = bytes_field(r.expect(2));
      out = std::move(x);
      break;
    }
    case MsgType::kAuthResponse: {
      AuthResponse x;
      x.certificate = bytes_field(r.expect(1));
      x.signature = signature_field(r.expect(2));
      out = std::move(x);
      break;
    }
    case MsgType::kSessionGrant: {
      SessionGrant x;
      x.sealed = sealed_field(r.expect(1));
      x.signature = signature_field(r.expect(2));
      out = std::move(x);
      break;
    }
    case MsgType::kAppData:
      out = AppData{bytes_field(r.expect(1))};
      break;
    default:
      throw Error(Errc::kUnknownType, "unknown message type");
  }
  r.finish();
  return out;
}

Bytes encode_frame(const Frame& f) {
  if (f.payload.size() > kMaxPayload) {
    throw Error(Errc::kOversize, fmt::format("payload of {} bytes exceeds 1 MiB", f.payload.size()));
  }
  Bytes out;
  out.reserve(kHeaderSize + f.payload.size());
  out.push_back(kMagic0);
  out.push_back(kMagic1);
  out.push_back(static_cast<std::uint8_t>(f.suite));
  out.push_back(static_cast<std::uint8_t>(f.type));
  put_u32(out, static_cast<std::uint32_t>(f.payload.size()));
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  return out;
}

Frame to_frame(const Message& m, Suite suite) {
  return Frame{suite, type_of(m), encode_payload(m)};
}

Bytes encode_msg(const Message& m, Suite suite) { return encode_frame(to_frame(m, suite)); }

std::variant<Frame, NeedMoreData> parse_frame(ByteView in, std::size_t& consumed) {
  consumed = 0;
  // Validate whatever header bytes are present before asking for more, so a
  // garbage stream fails fast.
  if (in.size() >= 1 && in[0] != kMagic0) throw Error(Errc::kBadMagic, "bad magic");
  if (in.size() >= 2 && in[1] != kMagic1) throw Error(Errc::kBadMagic, "bad magic");
  if (in.size() >= 3 && in[2] != static_cast<std::uint8_t>(Suite::kModern) &&
      in[2] != static_cast<std::uint8_t>(Suite::kLegacy3Des)) {
    throw Error(Errc::kUnknownVersion, fmt::format("unknown version 0x{:02x}", in[2]));
  }
  if (in.size() >= 4 && !is_known_type(in[3])) {
    throw Error(Errc::kUnknownType, fmt::format("unknown message type 0x{:02x}", in[3]));
  }
  if (in.size() < kHeaderSize) return NeedMoreData{kHeaderSize - in.size()};
  std::uint32_t len = get_u32(in.subspan(4, 4));
  if (len > kMaxPayload) throw Error(Errc::kOversize, "declared payload exceeds 1 MiB");
  if (in.size() - kHeaderSize < len) return NeedMoreData{kHeaderSize + len - in.size()};
  Frame f;
  f.suite = static_cast<Suite>(in[2]);
  f.type = static_cast<MsgType>(in[3]);
  f.payload.assign(in.begin() + kHeaderSize, in.begin() + kHeaderSize + len);
  consumed = kHeaderSize + len;
  return f;
}

std::variant<Message, NeedMoreData> decode_msg(ByteView in, Suite suite) {
  std::size_t consumed = 0;
  auto parsed = parse_frame(in, consumed);
  if (auto* more = std::get_if<NeedMoreData>(&parsed)) return *more;
  Frame& f = std::get<Frame>(parsed);
  if (consumed != in.size()) throw Error(Errc::kLengthMismatch, "bytes after declared payload");
  if (f.suite != suite) throw Error(Errc::kUnknownVersion, "suite mismatch");
  return decode_payload(f.type, f.payload);
}

void FrameReader::feed(ByteView chunk) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  }
  buf_.insert(buf_.end(), chunk.begin(), chunk.end());
}

std::optional<Frame> FrameReader::next() {
  std::size_t consumed = 0;
  auto parsed = parse_frame(ByteView(buf_).subspan(pos_), consumed);
  if (std::holds_alternative<NeedMoreData>(parsed)) return std::nullopt;
  pos_ += consumed;
  if (pos_ > 4096 && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  return std::move(std::get<Frame>(parsed));
}

std::optional<Frame> FrameStream::read() {
  std::uint8_t chunk[4096];
  for (;;) {
    if (auto f = reader_.next()) return f;
    std::size_t n = stream_.read_some(chunk);
    if (n == 0) {
      if (reader_.buffered() == 0) return std::nullopt;
      throw Error(Errc::kTruncated, "stream closed mid-frame");
    }
    reader_.feed(ByteView(chunk, n));
  }
}

void FrameStream::write(const Frame& f) { stream_.write_all(encode_frame(f)); }

std::optional<Frame> read_frame(FrameStream& s) { return s.read(); }
void write_frame(FrameStream& s, const Frame& f) { s.write(f); }

}  // namespace sso::wire
