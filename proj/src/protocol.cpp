#include "sso/protocol.hpp"

#include <chrono>

#include <fmt/format.h>

#include "sso/tlv.hpp"

namespace sso::protocol {

namespace {

constexpr std::size_t kMaxUsername = 255;
constexpr std::size_t kMaxPassword = 1024;
constexpr std::string_view kProbe = "sso key possession probe";

std::int64_t steady_us() {
  using namespace std::chrono;
  return duration_cast<microseconds>(steady_clock::now().time_since_epoch()).count();
}

Bytes raw_of(const wire::Message& m, wire::Suite suite) { return wire::encode_msg(m, suite); }

std::string replay_key(std::string_view context, const crypto::Digest& digest) {
  std::string k(context);
  k.push_back('\0');
  k.append(reinterpret_cast<const char*>(digest.view().data()), digest.view().size());
  return k;
}

}  // namespace

// ---- payloads ---------------------------------------------------------------

Bytes EnrollPayload::encode() const {
  tlv::Writer w;
  Bytes key = reply_key.encode();
  w.put_string(1, username).put_string(2, password).put(3, double_hash.view()).put(4, key);
  secure_wipe(key);
  return w.finish();
}

EnrollPayload EnrollPayload::decode(ByteView b) {
  tlv::Reader r(b);
  EnrollPayload p;
  p.username = r.expect_string(1, kMaxUsername);
  p.password = r.expect_string(2, kMaxPassword);
  p.double_hash = crypto::Digest::from_bytes(r.expect(3, crypto::kDigestSize));
  p.reply_key = crypto::SymKey::decode(r.expect(4));
  r.finish();
  return p;
}

Bytes GrantPayload::encode() const {
  tlv::Writer w;
  Bytes key = session_key.encode();
  w.put(1, key).put(2, nonce.view());
  secure_wipe(key);
  return w.finish();
}

GrantPayload GrantPayload::decode(ByteView b) {
  tlv::Reader r(b);
  GrantPayload p;
  p.session_key = crypto::SymKey::decode(r.expect(1));
  p.nonce = crypto::Nonce::from_bytes(r.expect(2, crypto::kNonceSize));
  r.finish();
  return p;
}

Bytes credentials_signed_bytes(const wire::Credentials& m4) {
  return concat({m4.certificate, m4.encrypted_secret_key, m4.nonce.view()});
}

// ---- replay cache -------------------------------------------------------------

ReplayCache::ReplayCache(std::int64_t ttl_ms, std::size_t capacity)
    : ttl_ms_(ttl_ms), capacity_(capacity == 0 ? 1 : capacity) {}

void ReplayCache::evict_expired(std::int64_t now_ms) {
  // Entries are inserted with a constant TTL, so expiry order is insertion order.
  while (!order_.empty() && order_.front().expires_ms <= now_ms) {
    index_.erase(order_.front().key);
    order_.pop_front();
  }
}

bool ReplayCache::check_and_insert(std::string_view context, const crypto::Digest& digest,
                                   std::int64_t now_ms) {
  std::lock_guard lock(mu_);
  evict_expired(now_ms);
  std::string key = replay_key(context, digest);
  if (index_.count(key) != 0) return false;
  if (order_.size() >= capacity_) {
    index_.erase(order_.front().key);
    order_.pop_front();
  }
  order_.push_back(Entry{key, now_ms + ttl_ms_});
  index_.emplace(std::move(key), std::prev(order_.end()));
  return true;
}

bool ReplayCache::contains(std::string_view context, const crypto::Digest& digest,
                           std::int64_t now_ms) {
  std::lock_guard lock(mu_);
  evict_expired(now_ms);
  return index_.count(replay_key(context, digest)) != 0;
}

std::size_t ReplayCache::size() const {
  std::lock_guard lock(mu_);
  return order_.size();
}

KeyTake InlineKeySource::take(Rng& rng) {
  std::int64_t t0 = steady_us();
  KeyTake out;
  out.keys = crypto::gen_keypair(bits_, rng);
  out.keygen_us = steady_us() - t0;
  return out;
}

// ---- retry timer ----------------------------------------------------------------

void RetryTimer::arm(std::int64_t now_ms, const ProtocolConfig& cfg) {
  retries_ = 0;
  next_ms_ = now_ms + cfg.retry_base_ms;
  deadline_ms_ = now_ms + cfg.handshake_timeout_ms;
}

RetryTimer::Due RetryTimer::poll(std::int64_t now_ms, const ProtocolConfig& cfg) {
  if (now_ms >= deadline_ms_) return Due::kGiveUp;
  if (now_ms < next_ms_) return Due::kNothing;
  if (retries_ >= cfg.max_retries) return Due::kGiveUp;
  ++retries_;
  std::int64_t interval = cfg.retry_base_ms;
  for (int i = 0; i < retries_; ++i) interval *= cfg.retry_factor;
  next_ms_ = now_ms + interval;
  return Due::kRetransmit;
}

// ---- client enrollment ---------------------------------------------------------

std::pair<ClientEnrollment, wire::ConnRequest> ClientEnrollment::start(
    std::string username, std::string password, crypto::PublicKey home_key,
    const ProtocolConfig& cfg, const Clock& clock) {
  if (username.empty()) throw Error(Errc::kParameter, "empty username");
  if (username.size() > kMaxUsername) throw Error(Errc::kParameter, "username too long");
  if (password.size() > kMaxPassword) throw Error(Errc::kParameter, "password too long");
  if (!home_key.valid()) throw Error(Errc::kParameter, "missing home server key");
  ClientEnrollment st;
  st.cfg_ = cfg;
  st.username_ = std::move(username);
  st.password_ = std::move(password);
  st.home_key_ = std::move(home_key);
  wire::ConnRequest m1{st.username_};
  st.last_sent_ = m1;
  st.phase_ = Phase::kSentM1;
  st.timer_.arm(clock.now_ms(), cfg);
  return {std::move(st), std::move(m1)};
}

ClientEnrollment::~ClientEnrollment() {
  secure_wipe(password_);
  if (reply_key_) reply_key_->wipe();
}

void ClientEnrollment::finish(Phase terminal) {
  phase_ = terminal;
  secure_wipe(password_);
  if (reply_key_) {
    reply_key_->wipe();
    reply_key_.reset();
  }
  if (last_sent_) {
    // M3 carries the sealed password; drop it too.
    last_sent_.reset();
  }
}

void ClientEnrollment::abandon() {
  if (phase_ != Phase::kDone) finish(Phase::kFailed);
}

wire::Enroll ClientEnrollment::on_m2(const wire::ConnAccept& m2, Rng& rng, const Clock& clock) {
  if (phase_ != Phase::kSentM1) throw Error(Errc::kProtocolOrder, "M2 outside SentM1");
  try {
    crypto::SymKey k = crypto::gen_sym_key(wire::session_cipher(cfg_.suite), rng);
    EnrollPayload payload{username_, password_, crypto::hash(m2.nonce_hash.view()), k};
    Bytes plain = payload.encode();
    secure_wipe(payload.password);
    payload.reply_key.wipe();
    wire::Enroll m3{crypto::seal(home_key_, plain, rng)};
    secure_wipe(plain);
    nonce_hash_ = m2.nonce_hash;
    reply_key_ = std::move(k);
    last_sent_ = m3;
    phase_ = Phase::kSentM3;
    timer_.arm(clock.now_ms(), cfg_);
    return m3;
  } catch (...) {
    finish(Phase::kFailed);
    throw;
  }
}

EnrollmentResult ClientEnrollment::on_m4(const wire::Credentials& m4, const Clock&) {
  if (phase_ != Phase::kSentM3) throw Error(Errc::kProtocolOrder, "M4 outside SentM3");
  auto fail = [&](Errc code, std::string_view what) {
    finish(Phase::kFailed);
    return Error(code, std::string(what));
  };
  if (crypto::hash(m4.nonce.view()) != *nonce_hash_) {
    throw fail(Errc::kNonceMismatch, "M4 nonce does not hash to the M2 value");
  }
  if (!crypto::verify(home_key_, credentials_signed_bytes(m4), m4.signature)) {
    throw fail(Errc::kBadSignature, "M4 signature does not verify");
  }
  crypto::SecretKey sk;
  try {
    Bytes sk_bytes = crypto::sym_decrypt(*reply_key_, m4.encrypted_secret_key);
    sk = crypto::SecretKey::decode(sk_bytes);
    secure_wipe(sk_bytes);
  } catch (const Error& e) {
    throw fail(Errc::kDecryption, fmt::format("cannot recover secret key: {}", e.what()));
  }
  cert::IdentityCertificate c;
  try {
    c = cert::decode(m4.certificate);
  } catch (const Error&) {
    finish(Phase::kFailed);
    throw;
  }
  const auto probe = to_bytes(kProbe);
  if (!(c.body.subject_public_key == sk.public_key()) ||
      !crypto::verify(c.body.subject_public_key, probe, crypto::sign(sk, probe))) {
    throw fail(Errc::kKeyMismatch, "certificate key does not match the delivered secret key");
  }
  EnrollmentResult out{std::move(c), m4.certificate, crypto::KeyPair{sk.public_key(), sk}};
  finish(Phase::kDone);
  return out;
}

TimerAction ClientEnrollment::on_timeout(const Clock& clock) {
  if (phase_ != Phase::kSentM1 && phase_ != Phase::kSentM3) return Wait{};
  switch (timer_.poll(clock.now_ms(), cfg_)) {
    case RetryTimer::Due::kNothing:
      return Wait{};
    case RetryTimer::Due::kRetransmit:
      return Retransmit{*last_sent_};
    case RetryTimer::Due::kGiveUp:
      break;
  }
  finish(Phase::kFailed);
  return GiveUp{};
}

// ---- home server ---------------------------------------------------------------

HomeHandshake::HomeHandshake(const HomeContext& ctx, const Clock& clock)
    : ctx_(ctx), clock_(clock), deadline_ms_(clock.now_ms() + ctx.config.handshake_timeout_ms) {}

void HomeHandshake::fail(Errc code) {
  phase_ = Phase::kFailed;
  failure_ = code;
  nonce_.reset();
}

wire::ConnAccept HomeHandshake::on_m1(const wire::ConnRequest& m1, Limits limits, Rng& rng) {
  if (phase_ != Phase::kAwaitM1) throw Error(Errc::kProtocolOrder, "M1 outside AwaitM1");
  if (limits.in_flight >= limits.max_concurrent) {
    fail(Errc::kAtCapacity);
    throw Error(Errc::kAtCapacity, "connection limit reached");
  }
  if (!ctx_.users.find_user(m1.username)) {
    fail(Errc::kUnknownUser);
    throw Error(Errc::kUnknownUser, fmt::format("unknown user '{}'", m1.username));
  }
  username_ = m1.username;
  nonce_ = crypto::gen_nonce(rng);
  phase_ = Phase::kSentM2;
  return wire::ConnAccept{crypto::hash(nonce_->view())};
}

wire::Credentials HomeHandshake::on_m3(const wire::Enroll& m3, Rng& rng) {
  if (phase_ != Phase::kSentM2) throw Error(Errc::kProtocolOrder, "M3 outside SentM2");
  std::int64_t t0 = steady_us();
  EnrollPayload p;
  try {
    Bytes plain = crypto::open(ctx_.server_keys.sec, m3.sealed);
    p = EnrollPayload::decode(plain);
    secure_wipe(plain);
  } catch (const Error& e) {
    fail(Errc::kDecryption);
    throw Error(Errc::kDecryption, e.code(), fmt::format("cannot open M3: {}", e.what()));
  }
  struct Wiper {
    EnrollPayload& p;
    ~Wiper() {
      secure_wipe(p.password);
      p.reply_key.wipe();
    }
  } wiper{p};

  const crypto::Digest nonce_digest = crypto::hash(nonce_->view());
  if (p.double_hash != crypto::hash(nonce_digest.view())) {
    fail(Errc::kFreshnessMismatch);
    throw Error(Errc::kFreshnessMismatch, "M3 digest does not match this connection's nonce");
  }
  if (!ctx_.replay.check_and_insert(ctx_.context_tag, nonce_digest, clock_.now_ms())) {
    fail(Errc::kReplayDetected);
    throw Error(Errc::kReplayDetected, "nonce already consumed");
  }
  if (p.username != username_ || !ctx_.users.check_password(username_, p.password)) {
    fail(Errc::kBadPassword);
    throw Error(Errc::kBadPassword, fmt::format("bad credentials for '{}'", username_));
  }
  auto user = ctx_.users.find_user(username_);
  if (!user) {
    fail(Errc::kUnknownUser);
    throw Error(Errc::kUnknownUser, fmt::format("user '{}' vanished", username_));
  }

  KeyTake take = ctx_.key_source.take(rng);
  cert::IdentityCertificate c =
      cert::issue(ctx_.server_keys.sec, ctx_.issuer.issuer_id, user->subject, user->roles,
                  take.keys.pub, ctx_.issuer.validity_seconds, clock_, rng);

  wire::Credentials m4;
  m4.certificate = cert::encode(c);
  Bytes sk_bytes = take.keys.sec.encode();
  m4.encrypted_secret_key = crypto::sym_encrypt(p.reply_key, sk_bytes, rng);
  secure_wipe(sk_bytes);
  m4.nonce = *nonce_;
  m4.signature = crypto::sign(ctx_.server_keys.sec, credentials_signed_bytes(m4));

  IssuanceReport report;
  report.username = username_;
  report.serial = c.body.serial;
  report.key_from_pool = take.from_pool;
  report.keygen_us = take.keygen_us;
  report.issuance_us = steady_us() - t0;
  issuance_ = std::move(report);
  nonce_.reset();
  phase_ = Phase::kDone;
  return m4;
}

ServerStep HomeHandshake::handle(const wire::Message& msg, Limits limits, Rng& rng) {
  ServerStep step;
  const Bytes raw = raw_of(msg, ctx_.config.suite);
  if (last_m1_ && raw == last_m1_->first) {
    // Duplicate M1: the client lost M2. Re-send it while it is still current.
    step.resent = true;
    if (phase_ == Phase::kSentM2) step.reply = last_m1_->second;
    return step;
  }
  if (last_m3_ && raw == last_m3_->first) {
    step.resent = true;
    step.reply = last_m3_->second;
    return step;
  }
  try {
    if (phase_ == Phase::kAwaitM1 && std::holds_alternative<wire::ConnRequest>(msg)) {
      wire::Message reply = on_m1(std::get<wire::ConnRequest>(msg), limits, rng);
      last_m1_.emplace(raw, reply);
      step.reply = std::move(reply);
    } else if (phase_ == Phase::kSentM2 && std::holds_alternative<wire::Enroll>(msg)) {
      wire::Message reply = on_m3(std::get<wire::Enroll>(msg), rng);
      last_m3_.emplace(raw, reply);
      step.reply = std::move(reply);
    } else {
      fail(Errc::kProtocolOrder);
    }
  } catch (const Error& e) {
    if (phase_ != Phase::kFailed) fail(e.code());
  }
  step.failure = failure_;
  return step;
}

bool HomeHandshake::expire_if_due() {
  if (phase_ != Phase::kAwaitM1 && phase_ != Phase::kSentM2) return false;
  if (clock_.now_ms() < deadline_ms_) return false;
  fail(Errc::kTimeout);
  return true;
}

// ---- client access ---------------------------------------------------------------

std::pair<ClientAccess, wire::AccessRequest> ClientAccess::start(Bytes certificate,
                                                                 crypto::KeyPair keys,
                                                                 cert::TrustStore trust,
                                                                 const ProtocolConfig& cfg,
                                                                 const Clock& clock) {
  cert::IdentityCertificate c = cert::decode(certificate);
  if (clock.now_seconds() > c.body.not_after) {
    throw Error(Errc::kReenrollNeeded, "certificate expired; enroll again");
  }
  if (!keys.sec.valid()) throw Error(Errc::kParameter, "missing client secret key");
  ClientAccess st;
  st.cfg_ = cfg;
  st.username_ = c.body.subject.username;
  st.certificate_ = std::move(certificate);
  st.keys_ = std::move(keys);
  st.trust_ = std::move(trust);
  wire::AccessRequest r1{st.username_};
  st.last_sent_ = r1;
  st.phase_ = Phase::kSentR1;
  st.timer_.arm(clock.now_ms(), cfg);
  return {std::move(st), std::move(r1)};
}

wire::AuthResponse ClientAccess::on_r2(const wire::Challenge& r2, const Clock& clock) {
  if (phase_ != Phase::kSentR1) throw Error(Errc::kProtocolOrder, "R2 outside SentR1");
  try {
    server_ = cert::validate(r2.server_certificate, trust_, clock);
  } catch (const Error& e) {
    phase_ = Phase::kFailed;
    throw Error(Errc::kServerUntrusted, e.code(),
                fmt::format("server certificate rejected: {}", e.what()));
  }
  nonce_ = r2.nonce;
  wire::AuthResponse r3{certificate_,
                        crypto::sign(keys_.sec, crypto::hash(r2.nonce.view()).view())};
  last_sent_ = r3;
  phase_ = Phase::kSentR3;
  timer_.arm(clock.now_ms(), cfg_);
  return r3;
}

SessionContext ClientAccess::on_r4(const wire::SessionGrant& r4, const Clock& clock) {
  if (phase_ != Phase::kSentR3) throw Error(Errc::kProtocolOrder, "R4 outside SentR3");
  if (!crypto::verify(server_->subject_public_key, r4.sealed.encode(), r4.signature)) {
    phase_ = Phase::kFailed;
    throw Error(Errc::kBadSignature, "R4 signature does not verify");
  }
  GrantPayload g;
  try {
    Bytes plain = crypto::open(keys_.sec, r4.sealed);
    g = GrantPayload::decode(plain);
    secure_wipe(plain);
  } catch (const Error& e) {
    phase_ = Phase::kFailed;
    throw Error(Errc::kDecryption, e.code(), fmt::format("cannot open R4: {}", e.what()));
  }
  if (g.nonce != *nonce_) {
    g.session_key.wipe();
    phase_ = Phase::kFailed;
    throw Error(Errc::kNonceMismatch, "R4 carries a different challenge nonce");
  }
  SessionContext s;
  s.peer_username = server_->subject.username;
  s.roles = server_->roles;
  s.session_key = std::move(g.session_key);
  s.established_at = clock.now_seconds();
  s.nonce_digest = crypto::hash(nonce_->view());
  session_ = s;
  last_sent_.reset();
  phase_ = Phase::kEstablished;
  return s;
}

TimerAction ClientAccess::on_timeout(const Clock& clock) {
  if (phase_ != Phase::kSentR1 && phase_ != Phase::kSentR3) return Wait{};
  switch (timer_.poll(clock.now_ms(), cfg_)) {
    case RetryTimer::Due::kNothing:
      return Wait{};
    case RetryTimer::Due::kRetransmit:
      return Retransmit{*last_sent_};
    case RetryTimer::Due::kGiveUp:
      break;
  }
  phase_ = Phase::kFailed;
  return GiveUp{};
}

void ClientAccess::abandon() {
  if (phase_ == Phase::kEstablished) {
    if (session_) session_->session_key.wipe();
    return;
  }
  phase_ = Phase::kFailed;
}

// ---- resource server -------------------------------------------------------------

ResourceHandshake::ResourceHandshake(const ResourceContext& ctx, const Clock& clock)
    : ctx_(ctx), clock_(clock), deadline_ms_(clock.now_ms() + ctx.config.handshake_timeout_ms) {}

void ResourceHandshake::fail(Errc code) {
  phase_ = Phase::kFailed;
  failure_ = code;
  nonce_.reset();
}

wire::Challenge ResourceHandshake::on_r1(const wire::AccessRequest&, Limits limits, Rng& rng) {
  if (phase_ != Phase::kAwaitR1) throw Error(Errc::kProtocolOrder, "R1 outside AwaitR1");
  if (limits.in_flight >= limits.max_concurrent) {
    fail(Errc::kAtCapacity);
    throw Error(Errc::kAtCapacity, "connection limit reached");
  }
  nonce_ = crypto::gen_nonce(rng);
  phase_ = Phase::kSentR2;
  return wire::Challenge{*nonce_, ctx_.server_certificate};
}

std::pair<wire::SessionGrant, SessionContext> ResourceHandshake::on_r3(
    const wire::AuthResponse& r3, Rng& rng) {
  if (phase_ != Phase::kSentR2) throw Error(Errc::kProtocolOrder, "R3 outside SentR2");
  cert::VerifiedIdentity id;
  try {
    id = cert::validate(r3.certificate, ctx_.trust, clock_);
  } catch (const Error& e) {
    fail(Errc::kCertInvalid);
    throw Error(Errc::kCertInvalid, e.code(),
                fmt::format("client certificate rejected: {}", e.what()));
  }
  const crypto::Digest challenge = crypto::hash(nonce_->view());
  if (!crypto::verify(id.subject_public_key, challenge.view(), r3.signature)) {
    fail(Errc::kBadChallengeSignature);
    throw Error(Errc::kBadChallengeSignature, "challenge signature does not verify");
  }
  if (!ctx_.replay.check_and_insert(ctx_.context_tag, challenge, clock_.now_ms())) {
    fail(Errc::kReplayDetected);
    throw Error(Errc::kReplayDetected, "challenge already answered");
  }
  GrantPayload g{crypto::gen_sym_key(wire::session_cipher(ctx_.config.suite), rng), *nonce_};
  Bytes plain = g.encode();
  wire::SessionGrant r4;
  r4.sealed = crypto::seal(id.subject_public_key, plain, rng);
  secure_wipe(plain);
  r4.signature = crypto::sign(ctx_.server_keys.sec, r4.sealed.encode());

  SessionContext s;
  s.peer_username = id.subject.username;
  s.roles = id.roles;
  s.session_key = std::move(g.session_key);
  s.established_at = clock_.now_seconds();
  s.nonce_digest = challenge;
  session_ = s;
  nonce_.reset();
  phase_ = Phase::kEstablished;
  return {std::move(r4), std::move(s)};
}

ServerStep ResourceHandshake::handle(const wire::Message& msg, Limits limits, Rng& rng) {
  ServerStep step;
  const Bytes raw = raw_of(msg, ctx_.config.suite);
  if (last_r1_ && raw == last_r1_->first) {
    step.resent = true;
    if (phase_ == Phase::kSentR2) step.reply = last_r1_->second;
    return step;
  }
  if (last_r3_ && raw == last_r3_->first) {
    step.resent = true;
    step.reply = last_r3_->second;
    return step;
  }
  try {
    if (phase_ == Phase::kAwaitR1 && std::holds_alternative<wire::AccessRequest>(msg)) {
      wire::Message reply = on_r1(std::get<wire::AccessRequest>(msg), limits, rng);
      last_r1_.emplace(raw, reply);
      step.reply = std::move(reply);
    } else if (phase_ == Phase::kSentR2 && std::holds_alternative<wire::AuthResponse>(msg)) {
      wire::Message reply = on_r3(std::get<wire::AuthResponse>(msg), rng).first;
      last_r3_.emplace(raw, reply);
      step.reply = std::move(reply);
    } else {
      fail(Errc::kProtocolOrder);
    }
  } catch (const Error& e) {
    if (phase_ != Phase::kFailed) fail(e.code());
  }
  step.failure = failure_;
  return step;
}

bool ResourceHandshake::expire_if_due() {
  if (phase_ != Phase::kAwaitR1 && phase_ != Phase::kSentR2) return false;
  if (clock_.now_ms() < deadline_ms_) return false;
  fail(Errc::kTimeout);
  return true;
}

void ResourceHandshake::close() {
  if (session_) session_->session_key.wipe();
  if (phase_ != Phase::kEstablished) phase_ = Phase::kFailed;
}

}  // namespace sso::protocol
