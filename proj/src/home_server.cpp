#include "sso/home_server.hpp"

#include <openssl/crypto.h>

#include <algorithm>

#include <fmt/format.h>

#include "sso/tlv.hpp"

namespace sso::home {

namespace fs = std::filesystem;

namespace {

crypto::Digest compute_verifier(ByteView salt, std::string_view password) {
  Bytes material(salt.begin(), salt.end());
  material.insert(material.end(), password.begin(), password.end());
  crypto::Digest d = crypto::hash(material);
  secure_wipe(material);
  return d;
}

std::int64_t steady_us() {
  using namespace std::chrono;
  return duration_cast<microseconds>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

// ---- user records -------------------------------------------------------------

UserRecord make_user_record(std::string username, std::string_view password,
                            std::vector<cert::Role> roles, cert::SubjectInfo subject, Rng& rng) {
  if (username.empty() || username.size() > 255) {
    throw Error(Errc::kParameter, "username must be 1..255 bytes");
  }
  UserRecord r;
  r.username = std::move(username);
  rng.fill(r.salt);
  r.verifier = compute_verifier(r.salt, password);
  r.roles = cert::canonical_roles(std::move(roles));
  r.subject = std::move(subject);
  r.subject.username = r.username;
  return r;
}

bool verify_password(const UserRecord& record, std::string_view password) {
  crypto::Digest d = compute_verifier(record.salt, password);
  return CRYPTO_memcmp(d.view().data(), record.verifier.view().data(), crypto::kDigestSize) == 0;
}

std::string encode_record_line(const UserRecord& r) {
  tlv::Writer w;
  w.put_string(1, r.username)
      .put(2, ByteView(r.salt))
      .put(3, r.verifier.view())
      .put_string(4, cert::join_roles(r.roles))
      .put_string(5, r.subject.location)
      .put_string(6, r.subject.organization)
      .put_string(7, r.subject.email);
  return base64_encode(w.finish());
}

UserRecord decode_record_line(std::string_view line) {
  Bytes raw = base64_decode(line);
  tlv::Reader rd(raw);
  UserRecord r;
  r.username = rd.expect_string(1, 255);
  if (r.username.empty()) throw Error(Errc::kMalformed, "empty username");
  ByteView salt = rd.expect(2, kSaltSize);
  std::copy(salt.begin(), salt.end(), r.salt.begin());
  r.verifier = crypto::Digest::from_bytes(rd.expect(3, crypto::kDigestSize));
  std::string roles = rd.expect_string(4, 64 * 1024);
  try {
    r.roles = cert::parse_roles(roles);
  } catch (const Error& e) {
    throw Error(Errc::kMalformed, e.what());
  }
  r.subject.username = r.username;
  r.subject.location = rd.expect_string(5, 255);
  r.subject.organization = rd.expect_string(6, 255);
  r.subject.email = rd.expect_string(7, 255);
  rd.finish();
  return r;
}

// ---- directory ------------------------------------------------------------------

const UserRecord& UserDirectory::add_user(std::string username, std::string_view password,
                                          std::vector<cert::Role> roles,
                                          cert::SubjectInfo subject, Rng& rng) {
  std::unique_lock lock(mu_);
  if (users_.count(username) != 0) {
    throw Error(Errc::kDuplicateUsername, fmt::format("user '{}' already exists", username));
  }
  UserRecord r = make_user_record(std::move(username), password, std::move(roles),
                                  std::move(subject), rng);
  std::string key = r.username;
  return users_.emplace(std::move(key), std::move(r)).first->second;
}

void UserDirectory::insert(UserRecord record) {
  std::unique_lock lock(mu_);
  if (users_.count(record.username) != 0) {
    throw Error(Errc::kDuplicateUsername,
                fmt::format("user '{}' already exists", record.username));
  }
  std::string key = record.username;
  users_.emplace(std::move(key), std::move(record));
}

std::optional<UserRecord> UserDirectory::find(std::string_view username) const {
  std::shared_lock lock(mu_);
  auto it = users_.find(username);
  if (it == users_.end()) return std::nullopt;
  return it->second;
}

std::size_t UserDirectory::size() const {
  std::shared_lock lock(mu_);
  return users_.size();
}

std::vector<UserRecord> UserDirectory::records() const {
  std::shared_lock lock(mu_);
  std::vector<UserRecord> out;
  for (const auto& [name, r] : users_) out.push_back(r);
  return out;
}

std::optional<protocol::UserEntry> UserDirectory::find_user(std::string_view username) const {
  std::shared_lock lock(mu_);
  auto it = users_.find(username);
  if (it == users_.end()) return std::nullopt;
  return protocol::UserEntry{it->second.subject, it->second.roles};
}

bool UserDirectory::check_password(std::string_view username, std::string_view password) const {
  std::shared_lock lock(mu_);
  auto it = users_.find(username);
  return it != users_.end() && verify_password(it->second, password);
}

std::unique_ptr<UserDirectory> UserDirectory::parse(std::string_view text) {
  auto dir = std::make_unique<UserDirectory>();
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    UserRecord r;
    try {
      r = decode_record_line(line);
    } catch (const Error& e) {
      throw Error(Errc::kMalformed, fmt::format("line {}: {}", line_no, e.what()));
    }
    if (dir->users_.count(r.username) != 0) {
      throw Error(Errc::kDuplicateUsername,
                  fmt::format("line {}: duplicate user '{}'", line_no, r.username));
    }
    std::string key = r.username;
    dir->users_.emplace(std::move(key), std::move(r));
  }
  return dir;
}

std::unique_ptr<UserDirectory> UserDirectory::load(const fs::path& path) {
  return parse(io::read_file(path));
}

std::string UserDirectory::serialize() const {
  std::shared_lock lock(mu_);
  std::string out;
  for (const auto& [name, r] : users_) {
    out += encode_record_line(r);
    out.push_back('\n');
  }
  return out;
}

void UserDirectory::save(const fs::path& path) const { io::write_file(path, serialize(), true); }

// ---- key pool -------------------------------------------------------------------

KeyPool::KeyPool(int bits, std::size_t capacity, Rng producer_rng)
    : bits_(bits), capacity_(capacity), producer_rng_(std::move(producer_rng)) {
  if (bits != 1024 && bits != 2048) throw Error(Errc::kParameter, "key size must be 1024 or 2048");
}

KeyPool::~KeyPool() { stop_background(); }

protocol::KeyTake KeyPool::take(Rng& rng) {
  {
    std::lock_guard lock(mu_);
    if (!queue_.empty()) {
      protocol::KeyTake t;
      t.keys = std::move(queue_.front());
      queue_.pop_front();
      t.from_pool = true;
      ++from_pool_;
      changed_.notify_all();
      return t;
    }
  }
  std::int64_t t0 = steady_us();
  protocol::KeyTake t;
  t.keys = crypto::gen_keypair(bits_, rng);
  t.keygen_us = steady_us() - t0;
  ++inline_;
  return t;
}

bool KeyPool::refill_once() {
  std::lock_guard producer(producer_mu_);
  {
    std::lock_guard lock(mu_);
    if (queue_.size() >= capacity_) return false;
  }
  crypto::KeyPair kp = crypto::gen_keypair(bits_, producer_rng_);
  std::lock_guard lock(mu_);
  if (queue_.size() >= capacity_) return false;
  queue_.push_back(std::move(kp));
  changed_.notify_all();
  return true;
}

void KeyPool::producer_loop() {
  for (;;) {
    {
      std::unique_lock lock(mu_);
      changed_.wait(lock, [&] { return stopping_ || queue_.size() < capacity_; });
      if (stopping_) return;
    }
    refill_once();
  }
}

void KeyPool::start_background() {
  if (capacity_ == 0 || producer_.joinable()) return;
  {
    std::lock_guard lock(mu_);
    stopping_ = false;
  }
  producer_ = std::thread([this] { producer_loop(); });
}

void KeyPool::stop_background() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  changed_.notify_all();
  if (producer_.joinable()) producer_.join();
}

bool KeyPool::wait_until_full(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  return changed_.wait_for(lock, timeout, [&] { return queue_.size() >= capacity_; });
}

std::size_t KeyPool::size() const {
  std::lock_guard lock(mu_);
  return queue_.size();
}

// ---- config and key files -----------------------------------------------------------

HomeServerConfig HomeServerConfig::from_kv(const io::KeyValueConfig& kv) {
  kv.check_known({"bind", "port", "max_concurrent", "key_bits", "cert_validity_seconds", "suite",
                  "keypool_size", "issuer_id", "handshake_timeout_ms", "user_db", "server_key",
                  "log"});
  HomeServerConfig c;
  c.bind = kv.get("bind", c.bind);
  std::int64_t port = kv.get_int("port", 0);
  if (port < 0 || port > 65535) throw Error(Errc::kConfig, "port out of range");
  c.port = static_cast<std::uint16_t>(port);
  std::int64_t maxc = kv.get_int("max_concurrent", static_cast<std::int64_t>(c.max_concurrent));
  if (maxc < 1) throw Error(Errc::kConfig, "max_concurrent must be at least 1");
  c.max_concurrent = static_cast<std::size_t>(maxc);
  c.key_bits = static_cast<int>(kv.get_int("key_bits", c.key_bits));
  if (c.key_bits != 1024 && c.key_bits != 2048) {
    throw Error(Errc::kConfig, "key_bits must be 1024 or 2048");
  }
  c.cert_validity_seconds = kv.get_int("cert_validity_seconds", c.cert_validity_seconds);
  if (c.cert_validity_seconds <= 0) throw Error(Errc::kConfig, "cert_validity_seconds must be positive");
  auto suite = wire::suite_from_name(kv.get("suite", "modern"));
  if (!suite) throw Error(Errc::kConfig, "suite must be modern or legacy-3des");
  c.suite = *suite;
  std::int64_t pool = kv.get_int("keypool_size", 0);
  if (pool < 0) throw Error(Errc::kConfig, "keypool_size must be non-negative");
  c.keypool_size = static_cast<std::size_t>(pool);
  c.issuer_id = kv.get("issuer_id", c.issuer_id);
  if (c.issuer_id.empty()) throw Error(Errc::kConfig, "issuer_id must not be empty");
  c.handshake_timeout_ms = kv.get_int("handshake_timeout_ms", c.handshake_timeout_ms);
  if (c.handshake_timeout_ms <= 0) throw Error(Errc::kConfig, "handshake_timeout_ms must be positive");
  c.user_db = kv.get_path("user_db", c.user_db);
  c.server_key = kv.get_path("server_key", c.server_key);
  c.log = kv.get_path("log", {});
  return c;
}

HomeServerConfig HomeServerConfig::load(const fs::path& path) {
  return from_kv(io::KeyValueConfig::load(path));
}

// ---- metrics ------------------------------------------------------------------------

void LatencyHistogram::record_us(std::int64_t us) {
  std::size_t i = 0;
  while (i < kLatencyBucketsMs.size() && us > kLatencyBucketsMs[i] * 1000) ++i;
  ++buckets_[i];
  ++count_;
  total_us_ += us;
}

std::array<std::uint64_t, kLatencyBucketsMs.size() + 1> LatencyHistogram::buckets() const {
  std::array<std::uint64_t, kLatencyBucketsMs.size() + 1> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = buckets_[i].load();
  return out;
}

// ---- daemon ---------------------------------------------------------------------------

HomeServer::HomeServer(HomeServerConfig cfg, std::shared_ptr<const UserDirectory> users,
                       crypto::KeyPair server_keys, io::Logger* log)
    : cfg_(std::move(cfg)),
      users_(std::move(users)),
      server_keys_(std::move(server_keys)),
      log_(log),
      replay_(cfg_.handshake_timeout_ms),
      master_rng_(Rng::from_entropy()) {
  pool_ = std::make_unique<KeyPool>(cfg_.key_bits, cfg_.keypool_size, master_rng_.fork("keypool"));
  protocol::ProtocolConfig pc;
  pc.suite = cfg_.suite;
  pc.handshake_timeout_ms = cfg_.handshake_timeout_ms;
  ctx_.reset(new protocol::HomeContext{
      *users_, server_keys_, protocol::IssuerConfig{cfg_.issuer_id, cfg_.cert_validity_seconds},
      *pool_, replay_, pc});
}

HomeServer::~HomeServer() { stop(); }

void HomeServer::start() {
  listener_ = std::make_unique<net::Listener>(cfg_.bind, cfg_.port);
  port_ = listener_->port();
  pool_->start_background();
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
  if (log_) {
    log_->event("listening", {{"addr", fmt::format("{}:{}", cfg_.bind, port_)},
                              {"suite", std::string(wire::suite_name(cfg_.suite))},
                              {"keypool", std::to_string(cfg_.keypool_size)}});
  }
}

void HomeServer::stop() {
  if (!acceptor_.joinable()) return;
  stopping_ = true;
  acceptor_.join();
  listener_->close();
  std::vector<Conn> conns;
  {
    std::lock_guard lock(conns_mu_);
    conns.swap(conns_);
  }
  for (auto& c : conns) c.thread.join();
  pool_->stop_background();
  if (log_) log_->event("stopped", {});
}

void HomeServer::accept_loop() {
  std::uint64_t next_id = 1;
  while (!stopping_) {
    auto sock = listener_->accept(50);
    {
      std::lock_guard lock(conns_mu_);
      conns_.erase(std::remove_if(conns_.begin(), conns_.end(),
                                  [](Conn& c) {
                                    if (!c.done->load()) return false;
                                    c.thread.join();
                                    return true;
                                  }),
                   conns_.end());
    }
    if (!sock) continue;
    std::size_t before = in_flight_.fetch_add(1);
    auto done = std::make_shared<std::atomic<bool>>(false);
    std::uint64_t id = next_id++;
    std::lock_guard lock(conns_mu_);
    conns_.push_back(Conn{std::thread([this, s = std::move(*sock), before, id, done]() mutable {
                            serve_connection(std::move(s), before, id);
                            --in_flight_;
                            done->store(true);
                          }),
                          done});
  }
}

void HomeServer::record_failure(Errc code) {
  std::lock_guard lock(failed_mu_);
  ++failed_[std::string(to_string(code))];
}

void HomeServer::serve_connection(net::Socket sock, std::size_t in_flight_before,
                                  std::uint64_t conn_id) {
  ++started_;
  Rng rng = [&] {
    std::lock_guard lock(rng_mu_);
    return master_rng_.fork("conn");
  }();
  protocol::HomeHandshake hs(*ctx_, clock_);
  protocol::Limits limits{in_flight_before, cfg_.max_concurrent};
  wire::FrameStream stream(sock);
  std::string username;
  std::optional<Errc> failure;

  try {
    while (hs.phase() != protocol::HomeHandshake::Phase::kDone) {
      std::int64_t remaining = hs.deadline_ms() - clock_.now_ms();
      if (remaining <= 0) {
        failure = Errc::kTimeout;
        break;
      }
      sock.set_read_timeout_ms(static_cast<int>(std::min<std::int64_t>(remaining, 1 << 30)));
      auto frame = stream.read();
      if (!frame) {
        failure = Errc::kNetwork;
        break;
      }
      if (frame->suite != cfg_.suite) {
        failure = Errc::kUnknownVersion;
        break;
      }
      wire::Message msg = wire::decode_payload(frame->type, frame->payload);
      if (auto* m1 = std::get_if<wire::ConnRequest>(&msg); m1 && username.empty()) {
        username = m1->username;
      }
      protocol::ServerStep step = hs.handle(msg, limits, rng);
      if (step.reply) stream.write(wire::to_frame(*step.reply, cfg_.suite));
      if (step.failure) {
        failure = step.failure;
        break;
      }
    }
  } catch (const Error& e) {
    failure = e.code();
  }

  std::string outcome = "ok";
  if (failure) {
    bool refusal = *failure == Errc::kUnknownUser || *failure == Errc::kAtCapacity;
    if (refusal) ++refused_;
    record_failure(*failure);
    outcome = refusal ? "refused" : "failed";
  } else {
    ++completed_;
    const auto& rep = *hs.issuance();
    issuance_.record_us(rep.issuance_us);
    keygen_us_total_ += rep.keygen_us;
    if (rep.key_from_pool) ++from_pool_;
    else ++inline_;
  }
  if (log_) {
    if (failure) {
      log_->event("enroll", {{"conn", std::to_string(conn_id)},
                             {"user", username},
                             {"outcome", outcome},
                             {"reason", std::string(to_string(*failure))}});
    } else {
      const auto& rep = *hs.issuance();
      log_->event("enroll", {{"conn", std::to_string(conn_id)},
                             {"user", username},
                             {"outcome", outcome},
                             {"serial", to_hex(rep.serial)},
                             {"issuance_us", std::to_string(rep.issuance_us)},
                             {"keygen_us", std::to_string(rep.keygen_us)},
                             {"key_source", rep.key_from_pool ? "pool" : "inline"}});
    }
  }
  sock.close();
}

HomeCounters HomeServer::counters() const {
  HomeCounters c;
  c.started = started_.load();
  c.completed = completed_.load();
  c.refused = refused_.load();
  {
    std::lock_guard lock(failed_mu_);
    c.failed = failed_;
  }
  c.issued_from_pool = from_pool_.load();
  c.issued_inline = inline_.load();
  c.issuance_us_total = issuance_.total_us();
  c.keygen_us_total = keygen_us_total_.load();
  c.issuance_histogram = issuance_.buckets();
  return c;
}

}  // namespace sso::home
