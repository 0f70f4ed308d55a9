#pragma once

#include <cstdint>
#include <list>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "sso/certificate.hpp"
#include "sso/clock.hpp"
#include "sso/crypto.hpp"
#include "sso/error.hpp"
#include "sso/wire.hpp"

// Transport-free state machines for the two authentication phases.
//
// Phase 1, client A enrolling at home server B:
//   M1  A -> B  username
//   M2  B -> A  h(N)                              (B keeps N)
//   M3  A -> B  seal_pkB(username, password, h(h(N)), K_AB)
//   M4  B -> A  cert, E_KAB(sk_A), N, sig_skB(cert || E_KAB(sk_A) || N)
//
// Phase 2, client A at resource server S:
//   R1  A -> S  client hint
//   R2  S -> A  N', cert_S
//   R3  A -> S  cert_A, sig_skA(h(N'))
//   R4  S -> A  box = seal_pkA(K_session, N'), sig_skS(box)
//
// Every step takes time from a Clock and randomness from an Rng; nothing
// here touches sockets or the system clock.
namespace sso::protocol {

struct ProtocolConfig {
  wire::Suite suite = wire::Suite::kModern;
  std::int64_t handshake_timeout_ms = 10'000;
  int max_retries = 3;
  std::int64_t retry_base_ms = 500;
  int retry_factor = 2;
};

// ---- payloads carried inside sealed boxes ----------------------------------

struct EnrollPayload {
  std::string username;
  std::string password;
  crypto::Digest double_hash;  // h(h(N))
  crypto::SymKey reply_key;    // K_AB

  Bytes encode() const;
  static EnrollPayload decode(ByteView b);
};

struct GrantPayload {
  crypto::SymKey session_key;
  crypto::Nonce nonce;

  Bytes encode() const;
  static GrantPayload decode(ByteView b);
};

// ---- shared server state ------------------------------------------------------

// Recently accepted (context, nonce digest) pairs. Entries live for the
// handshake timeout; beyond capacity the least recently inserted goes first.
// Thread-safe.
class ReplayCache {
 public:
  static constexpr std::size_t kDefaultCapacity = 1u << 16;

  explicit ReplayCache(std::int64_t ttl_ms = 10'000, std::size_t capacity = kDefaultCapacity);

  // Atomic check-and-insert. Returns false if the pair is already present.
  bool check_and_insert(std::string_view context, const crypto::Digest& digest,
                        std::int64_t now_ms);
  bool contains(std::string_view context, const crypto::Digest& digest, std::int64_t now_ms);
  std::size_t size() const;

 private:
  struct Entry {
    std::string key;
    std::int64_t expires_ms;
  };
  void evict_expired(std::int64_t now_ms);

  std::int64_t ttl_ms_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::list<Entry> order_;  // oldest first
  std::unordered_map<std::string, std::list<Entry>::iterator> index_;
};

// Admission state for a server, sampled when a handshake opens.
struct Limits {
  std::size_t in_flight = 0;
  std::size_t max_concurrent = 1;
};

struct UserEntry {
  cert::SubjectInfo subject;
  std::vector<cert::Role> roles;
};

// Read-only view of the home server's user directory.
class UserLookup {
 public:
  virtual ~UserLookup() = default;
  virtual std::optional<UserEntry> find_user(std::string_view username) const = 0;
  virtual bool check_password(std::string_view username, std::string_view password) const = 0;
};

struct KeyTake {
  crypto::KeyPair keys;
  bool from_pool = false;
  std::int64_t keygen_us = 0;  // 0 when served from a pool
};

// Supplies fresh client keypairs at issuance time. Implementations must be
// safe to call from several connection tasks at once.
class KeySource {
 public:
  virtual ~KeySource() = default;
  virtual KeyTake take(Rng& rng) = 0;
};

class InlineKeySource final : public KeySource {
 public:
  explicit InlineKeySource(int bits) : bits_(bits) {}
  KeyTake take(Rng& rng) override;

 private:
  int bits_;
};

// ---- timers --------------------------------------------------------------

struct Wait {};
struct Retransmit {
  wire::Message message;
};
struct GiveUp {};
using TimerAction = std::variant<Wait, Retransmit, GiveUp>;

// Client retransmission schedule for one outstanding message: resend after
// base, base*factor, base*factor^2, ... up to max_retries, then give up.
// Rearmed whenever the client moves to a new state.
class RetryTimer {
 public:
  void arm(std::int64_t now_ms, const ProtocolConfig& cfg);
  // True when a retransmission is due now; advances the schedule.
  enum class Due { kNothing, kRetransmit, kGiveUp };
  Due poll(std::int64_t now_ms, const ProtocolConfig& cfg);
  std::int64_t next_ms() const { return next_ms_; }
  std::int64_t deadline_ms() const { return deadline_ms_; }
  int retries() const { return retries_; }

 private:
  int retries_ = 0;
  std::int64_t next_ms_ = 0;
  std::int64_t deadline_ms_ = 0;
};

// ---- Phase 1 ----------------------------------------------------------------

struct EnrollmentResult {
  cert::IdentityCertificate certificate;
  Bytes certificate_bytes;
  crypto::KeyPair keys;
};

class ClientEnrollment {
 public:
  enum class Phase { kIdle, kSentM1, kSentM3, kDone, kFailed };

  // Throws Error(kParameter) for an empty username or missing server key.
  static std::pair<ClientEnrollment, wire::ConnRequest> start(std::string username,
                                                              std::string password,
                                                              crypto::PublicKey home_key,
                                                              const ProtocolConfig& cfg,
                                                              const Clock& clock);

  ClientEnrollment(ClientEnrollment&&) noexcept = default;
  ClientEnrollment& operator=(ClientEnrollment&&) noexcept = default;
  ~ClientEnrollment();

  // Order errors (kProtocolOrder) leave the state untouched; any other
  // error moves it to kFailed.
  wire::Enroll on_m2(const wire::ConnAccept& m2, Rng& rng, const Clock& clock);
  EnrollmentResult on_m4(const wire::Credentials& m4, const Clock& clock);
  TimerAction on_timeout(const Clock& clock);
  // Moves to kFailed (e.g. the transport closed).
  void abandon();

  Phase phase() const { return phase_; }
  const RetryTimer& timer() const { return timer_; }
  const std::string& username() const { return username_; }
  // Introspection for hygiene tests: empty after any terminal state.
  const std::string& password_for_testing() const { return password_; }
  const crypto::SymKey* reply_key_for_testing() const {
    return reply_key_ ? &*reply_key_ : nullptr;
  }

 private:
  ClientEnrollment() = default;
  void finish(Phase terminal);

  Phase phase_ = Phase::kIdle;
  ProtocolConfig cfg_;
  std::string username_;
  std::string password_;
  crypto::PublicKey home_key_;
  std::optional<crypto::Digest> nonce_hash_;
  std::optional<crypto::SymKey> reply_key_;
  std::optional<wire::Message> last_sent_;
  RetryTimer timer_;
};

struct IssuerConfig {
  std::string issuer_id = "home";
  std::int64_t validity_seconds = cert::kDefaultValiditySeconds;
};

// Shared, read-mostly state for every Phase-1 connection on one home server.
struct HomeContext {
  const UserLookup& users;
  const crypto::KeyPair& server_keys;
  IssuerConfig issuer;
  KeySource& key_source;
  ReplayCache& replay;
  ProtocolConfig config;
  std::string context_tag = "home";
};

struct IssuanceReport {
  std::string username;
  cert::Serial serial{};
  bool key_from_pool = false;
  std::int64_t keygen_us = 0;
  std::int64_t issuance_us = 0;  // M3 receipt to M4 ready
};

// What a server connection should do after handling one message.
struct ServerStep {
  std::optional<wire::Message> reply;
  std::optional<Errc> failure;  // set when the connection must close
  bool resent = false;          // idempotent re-send of an earlier reply
};

class HomeHandshake {
 public:
  enum class Phase { kAwaitM1, kSentM2, kDone, kFailed };

  HomeHandshake(const HomeContext& ctx, const Clock& clock);

  // Throws Error(kUnknownUser) or Error(kAtCapacity): a refusal, which the
  // transport signals only by closing.
  wire::ConnAccept on_m1(const wire::ConnRequest& m1, Limits limits, Rng& rng);
  // Throws kFreshnessMismatch, kReplayDetected, kBadPassword, kDecryption.
  wire::Credentials on_m3(const wire::Enroll& m3, Rng& rng);

  // Dispatches by state and answers byte-identical duplicates with the
  // cached reply. Never throws sso::Error.
  ServerStep handle(const wire::Message& msg, Limits limits, Rng& rng);
  // Discards state once the handshake timeout has passed.
  bool expire_if_due();

  Phase phase() const { return phase_; }
  std::optional<Errc> failure() const { return failure_; }
  std::int64_t deadline_ms() const { return deadline_ms_; }
  const std::optional<IssuanceReport>& issuance() const { return issuance_; }
  const crypto::Nonce* nonce_for_testing() const { return nonce_ ? &*nonce_ : nullptr; }

 private:
  void fail(Errc code);

  const HomeContext& ctx_;
  const Clock& clock_;
  Phase phase_ = Phase::kAwaitM1;
  std::optional<Errc> failure_;
  std::int64_t deadline_ms_ = 0;
  std::string username_;
  std::optional<crypto::Nonce> nonce_;
  std::optional<std::pair<Bytes, wire::Message>> last_m1_, last_m3_;  // request bytes, reply
  std::optional<IssuanceReport> issuance_;
};

// ---- Phase 2 ----------------------------------------------------------------

struct SessionContext {
  std::string peer_username;
  std::vector<cert::Role> roles;
  crypto::SymKey session_key;
  std::int64_t established_at = 0;  // unix seconds
  crypto::Digest nonce_digest;      // h(N') of the handshake that made it
};

class ClientAccess {
 public:
  enum class Phase { kIdle, kSentR1, kSentR3, kEstablished, kFailed };

  // Throws Error(kReenrollNeeded) if the certificate is past not_after on
  // the local clock, kMalformed if it does not decode.
  static std::pair<ClientAccess, wire::AccessRequest> start(Bytes certificate,
                                                            crypto::KeyPair keys,
                                                            cert::TrustStore trust,
                                                            const ProtocolConfig& cfg,
                                                            const Clock& clock);

  // Throws kServerUntrusted (cause = validation error) or kProtocolOrder.
  wire::AuthResponse on_r2(const wire::Challenge& r2, const Clock& clock);
  // Throws kBadSignature, kDecryption, kNonceMismatch or kProtocolOrder.
  SessionContext on_r4(const wire::SessionGrant& r4, const Clock& clock);
  TimerAction on_timeout(const Clock& clock);
  void abandon();

  Phase phase() const { return phase_; }
  const RetryTimer& timer() const { return timer_; }
  const std::optional<SessionContext>& session() const { return session_; }
  const std::string& username() const { return username_; }

 private:
  ClientAccess() = default;

  Phase phase_ = Phase::kIdle;
  ProtocolConfig cfg_;
  std::string username_;
  Bytes certificate_;
  crypto::KeyPair keys_;
  cert::TrustStore trust_;
  std::optional<crypto::Nonce> nonce_;
  std::optional<cert::VerifiedIdentity> server_;
  std::optional<wire::Message> last_sent_;
  std::optional<SessionContext> session_;
  RetryTimer timer_;
};

struct ResourceContext {
  const Bytes& server_certificate;
  const crypto::KeyPair& server_keys;
  const cert::TrustStore& trust;
  ReplayCache& replay;
  ProtocolConfig config;
  std::string context_tag = "resource";
};

class ResourceHandshake {
 public:
  enum class Phase { kAwaitR1, kSentR2, kEstablished, kFailed };

  ResourceHandshake(const ResourceContext& ctx, const Clock& clock);

  // Throws Error(kAtCapacity).
  wire::Challenge on_r1(const wire::AccessRequest& r1, Limits limits, Rng& rng);
  // Throws kCertInvalid (cause = validation error), kBadChallengeSignature
  // or kReplayDetected.
  std::pair<wire::SessionGrant, SessionContext> on_r3(const wire::AuthResponse& r3, Rng& rng);

  ServerStep handle(const wire::Message& msg, Limits limits, Rng& rng);
  bool expire_if_due();
  // Drops the session key once the connection is gone.
  void close();

  Phase phase() const { return phase_; }
  std::optional<Errc> failure() const { return failure_; }
  const std::optional<SessionContext>& session() const { return session_; }
  const crypto::Nonce* nonce_for_testing() const { return nonce_ ? &*nonce_ : nullptr; }

 private:
  void fail(Errc code);

  const ResourceContext& ctx_;
  const Clock& clock_;
  Phase phase_ = Phase::kAwaitR1;
  std::optional<Errc> failure_;
  std::int64_t deadline_ms_ = 0;
  std::optional<crypto::Nonce> nonce_;
  std::optional<std::pair<Bytes, wire::Message>> last_r1_, last_r3_;
  std::optional<SessionContext> session_;
};

// Bytes the M4 signature covers.
Bytes credentials_signed_bytes(const wire::Credentials& m4);

}  // namespace sso::protocol
