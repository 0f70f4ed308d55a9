#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "sso/keyfile.hpp"
#include "sso/net.hpp"
#include "sso/protocol.hpp"
#include "sso/resource_server.hpp"

// Client side of both phases over TCP, plus the on-disk credential cache.
namespace sso::client {

// Certificate envelope followed by secret-key envelope, one file.
struct CachedCredentials {
  Bytes certificate;
  cert::IdentityCertificate decoded;
  crypto::KeyPair keys;
};

std::string encode_cache(ByteView certificate, const crypto::SecretKey& sk);
// Throws Error(kMalformed) for a bad envelope or a key that does not
// match the certificate.
CachedCredentials decode_cache(std::string_view text);
// Mode 0600.
void save_cache(const std::filesystem::path& path, ByteView certificate,
                const crypto::SecretKey& sk);
// Throws Error(kIo) if missing, kMalformed if corrupt.
CachedCredentials load_cache(const std::filesystem::path& path);

struct ClientOptions {
  protocol::ProtocolConfig protocol;
  int connect_timeout_ms = 5000;
  // Connection attempts after the first, with the protocol backoff.
  int connect_retries = 3;
};

// Phase 1. A connection closed by the home server before M4 is reported as
// Error(kAuthentication): refusals are deliberately indistinguishable.
// Unreachable servers give Error(kNetwork) after the configured retries.
protocol::EnrollmentResult enroll(const net::Endpoint& home, const std::string& username,
                                  std::string password, const cert::TrustAnchor& anchor,
                                  const ClientOptions& options, Rng& rng, const Clock& clock);

// An established Phase-2 session over its own connection.
class Session {
 public:
  Session(net::Socket sock, protocol::SessionContext ctx, wire::Suite suite, Rng rng);
  Session(Session&&) noexcept = default;
  ~Session();

  // Throws Error(kNetwork) if the server closes, kAuthentication if the
  // response fails to decrypt.
  resource::AppResponse request(const resource::AppRequest& req);
  const protocol::SessionContext& context() const { return ctx_; }
  void close();

 private:
  net::Socket sock_;
  protocol::SessionContext ctx_;
  wire::Suite suite_;
  Rng rng_;
};

// Phase 2. Throws kReenrollNeeded for a locally expired certificate,
// kServerUntrusted, kAuthentication (closed before R4), kNetwork.
Session open_session(const net::Endpoint& server, const CachedCredentials& creds,
                     const cert::TrustStore& trust, const ClientOptions& options, Rng rng,
                     const Clock& clock);

// Exit codes of the `sso` command.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitAuthFailed = 4,
  kExitNetwork = 5,
  kExitReenroll = 6,
  kExitDenied = 7,
};
int exit_code_for(Errc code);

}  // namespace sso::client
