#include "sso/client.hpp"

#include <thread>

#include <fmt/format.h>

#include "sso/io.hpp"

namespace sso::client {

namespace fs = std::filesystem;

// ---- cache --------------------------------------------------------------------------

std::string encode_cache(ByteView certificate, const crypto::SecretKey& sk) {
  Bytes enc = sk.encode();
  std::string out = cert::armor(cert::kCertificateLabel, certificate);
  out += cert::armor(cert::kSecretKeyLabel, enc);
  secure_wipe(enc);
  return out;
}

CachedCredentials decode_cache(std::string_view text) {
  CachedCredentials c;
  c.certificate = cert::dearmor(cert::kCertificateLabel, text);
  c.decoded = cert::decode(c.certificate);
  Bytes enc = cert::dearmor(cert::kSecretKeyLabel, text);
  crypto::SecretKey sk = crypto::SecretKey::decode(enc);
  secure_wipe(enc);
  if (!(sk.public_key() == c.decoded.body.subject_public_key)) {
    throw Error(Errc::kMalformed, "cached key does not match the cached certificate");
  }
  c.keys = crypto::KeyPair{sk.public_key(), sk};
  return c;
}

void save_cache(const fs::path& path, ByteView certificate, const crypto::SecretKey& sk) {
  std::string text = encode_cache(certificate, sk);
  io::write_file(path, text, true);
  secure_wipe(text);
}

CachedCredentials load_cache(const fs::path& path) {
  std::string text = io::read_file(path);
  CachedCredentials c = decode_cache(text);
  secure_wipe(text);
  return c;
}

// ---- transport helpers ---------------------------------------------------------------

namespace {

net::Socket connect_with_retries(const net::Endpoint& ep, const ClientOptions& options) {
  std::int64_t backoff = options.protocol.retry_base_ms;
  for (int attempt = 0;; ++attempt) {
    try {
      return net::Socket::connect(ep.host, ep.port, options.connect_timeout_ms);
    } catch (const Error& e) {
      if (attempt >= options.connect_retries) {
        throw Error(Errc::kNetwork, fmt::format("{} (after {} attempts)", e.what(), attempt + 1));
      }
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
    backoff *= options.protocol.retry_factor;
  }
}

// Reads one message before `deadline_ms`. A clean close maps to
// kAuthentication since servers refuse by closing.
wire::Message read_message(net::Socket& sock, wire::FrameStream& stream, wire::Suite suite,
                           std::int64_t deadline_ms, const Clock& clock, std::string_view waiting) {
  std::int64_t remaining = deadline_ms - clock.now_ms();
  if (remaining <= 0) throw Error(Errc::kTimeout, fmt::format("timed out waiting for {}", waiting));
  sock.set_read_timeout_ms(static_cast<int>(remaining));
  std::optional<wire::Frame> frame;
  try {
    frame = stream.read();
  } catch (const Error& e) {
    if (e.code() == Errc::kTimeout) {
      throw Error(Errc::kTimeout, fmt::format("timed out waiting for {}", waiting));
    }
    throw;
  }
  if (!frame) {
    throw Error(Errc::kAuthentication,
                fmt::format("server closed the connection instead of sending {}", waiting));
  }
  if (frame->suite != suite) throw Error(Errc::kUnknownVersion, "server uses a different suite");
  return wire::decode_payload(frame->type, frame->payload);
}

}  // namespace

// ---- phase 1 ---------------------------------------------------------------------------

protocol::EnrollmentResult enroll(const net::Endpoint& home, const std::string& username,
                                  std::string password, const cert::TrustAnchor& anchor,
                                  const ClientOptions& options, Rng& rng, const Clock& clock) {
  const wire::Suite suite = options.protocol.suite;
  auto [st, m1] = protocol::ClientEnrollment::start(username, std::move(password), anchor.key,
                                                    options.protocol, clock);
  try {
    net::Socket sock = connect_with_retries(home, options);
    wire::FrameStream stream(sock);
    stream.write(wire::to_frame(m1, suite));

    wire::Message m2 = read_message(sock, stream, suite, st.timer().deadline_ms(), clock, "M2");
    auto* accept = std::get_if<wire::ConnAccept>(&m2);
    if (!accept) throw Error(Errc::kProtocolOrder, "expected M2");
    stream.write(wire::to_frame(st.on_m2(*accept, rng, clock), suite));

    wire::Message m4 = read_message(sock, stream, suite, st.timer().deadline_ms(), clock, "M4");
    auto* creds = std::get_if<wire::Credentials>(&m4);
    if (!creds) throw Error(Errc::kProtocolOrder, "expected M4");
    protocol::EnrollmentResult res = st.on_m4(*creds, clock);

    cert::TrustStore trust;
    trust.add(anchor.issuer_id, anchor.key);
    try {
      cert::validate(res.certificate, trust, clock);
    } catch (const Error& e) {
      throw Error(Errc::kCertInvalid, e.code(),
                  fmt::format("issued certificate does not validate: {}", e.what()));
    }
    return res;
  } catch (...) {
    st.abandon();
    throw;
  }
}

// ---- phase 2 ---------------------------------------------------------------------------

Session::Session(net::Socket sock, protocol::SessionContext ctx, wire::Suite suite, Rng rng)
    : sock_(std::move(sock)),
      ctx_(std::move(ctx)),
      suite_(suite),
      rng_(std::move(rng)) {}

Session::~Session() { close(); }

void Session::close() {
  ctx_.session_key.wipe();
  sock_.close();
}

resource::AppResponse Session::request(const resource::AppRequest& req) {
  // One response per request and no pipelining, so nothing is buffered
  // between calls.
  wire::FrameStream stream(sock_);
  stream.write(wire::to_frame(resource::seal_request(ctx_.session_key, req, rng_), suite_));
  sock_.set_read_timeout_ms(30'000);
  std::optional<wire::Frame> frame = stream.read();
  if (!frame) throw Error(Errc::kNetwork, "server closed the session");
  if (frame->type != wire::MsgType::kAppData) throw Error(Errc::kProtocolOrder, "expected data");
  auto data = std::get<wire::AppData>(wire::decode_payload(frame->type, frame->payload));
  return resource::open_response(ctx_.session_key, data);
}

Session open_session(const net::Endpoint& server, const CachedCredentials& creds,
                     const cert::TrustStore& trust, const ClientOptions& options, Rng rng,
                     const Clock& clock) {
  const wire::Suite suite = options.protocol.suite;
  auto [st, r1] =
      protocol::ClientAccess::start(creds.certificate, creds.keys, trust, options.protocol, clock);
  net::Socket sock = connect_with_retries(server, options);
  auto stream = std::make_unique<wire::FrameStream>(sock);
  stream->write(wire::to_frame(r1, suite));

  wire::Message r2 = read_message(sock, *stream, suite, st.timer().deadline_ms(), clock, "R2");
  auto* challenge = std::get_if<wire::Challenge>(&r2);
  if (!challenge) throw Error(Errc::kProtocolOrder, "expected R2");
  stream->write(wire::to_frame(st.on_r2(*challenge, clock), suite));

  wire::Message r4 = read_message(sock, *stream, suite, st.timer().deadline_ms(), clock, "R4");
  auto* grant = std::get_if<wire::SessionGrant>(&r4);
  if (!grant) throw Error(Errc::kProtocolOrder, "expected R4");
  protocol::SessionContext ctx = st.on_r4(*grant, clock);
  stream.reset();
  return Session(std::move(sock), std::move(ctx), suite, std::move(rng));
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::kReenrollNeeded:
      return kExitReenroll;
    case Errc::kNetwork:
    case Errc::kTimeout:
    case Errc::kTruncated:
    case Errc::kBadMagic:
    case Errc::kUnknownVersion:
    case Errc::kUnknownType:
    case Errc::kLengthMismatch:
    case Errc::kOversize:
      return kExitNetwork;
    case Errc::kIo:
    case Errc::kMalformed:
    case Errc::kParameter:
    case Errc::kConfig:
    case Errc::kEncoding:
      return kExitUsage;
    default:
      return kExitAuthFailed;
  }
}

}  // namespace sso::client
