#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "sso/io.hpp"
#include "sso/keyfile.hpp"
#include "sso/net.hpp"
#include "sso/protocol.hpp"

namespace sso::home {

// ---- user directory -------------------------------------------------------

inline constexpr std::size_t kSaltSize = 16;

struct UserRecord {
  std::string username;
  std::array<std::uint8_t, kSaltSize> salt{};
  crypto::Digest verifier;  // hash(salt || password)
  std::vector<cert::Role> roles;
  cert::SubjectInfo subject;  // subject.username == username

  friend bool operator==(const UserRecord&, const UserRecord&) = default;
};

// Fresh salt from `rng`. Throws Error(kParameter) for an empty username.
UserRecord make_user_record(std::string username, std::string_view password,
                            std::vector<cert::Role> roles, cert::SubjectInfo subject, Rng& rng);
// Constant-time comparison of hash(salt || password) with the verifier.
bool verify_password(const UserRecord& record, std::string_view password);

// One base64 TLV record per line.
std::string encode_record_line(const UserRecord& r);
UserRecord decode_record_line(std::string_view line);

// Read-mostly; lookups take a shared lock.
class UserDirectory final : public protocol::UserLookup {
 public:
  UserDirectory() = default;

  // Throws Error(kDuplicateUsername).
  const UserRecord& add_user(std::string username, std::string_view password,
                             std::vector<cert::Role> roles, cert::SubjectInfo subject, Rng& rng);
  void insert(UserRecord record);
  std::optional<UserRecord> find(std::string_view username) const;
  std::size_t size() const;
  std::vector<UserRecord> records() const;

  std::optional<protocol::UserEntry> find_user(std::string_view username) const override;
  bool check_password(std::string_view username, std::string_view password) const override;

  // Empty and comment ('#') lines are skipped. Throws Error(kMalformed)
  // naming the line, or Error(kDuplicateUsername) naming the user.
  static std::unique_ptr<UserDirectory> parse(std::string_view text);
  static std::unique_ptr<UserDirectory> load(const std::filesystem::path& path);
  std::string serialize() const;
  // Written with mode 0600.
  void save(const std::filesystem::path& path) const;

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, UserRecord, std::less<>> users_;
};

// ---- keypair pool -----------------------------------------------------------

// Bounded queue of pregenerated client keypairs with one background
// producer. take() never blocks on the producer: an empty pool falls back
// to generating inline.
class KeyPool final : public protocol::KeySource {
 public:
  KeyPool(int bits, std::size_t capacity, Rng producer_rng);
  ~KeyPool() override;
  KeyPool(const KeyPool&) = delete;
  KeyPool& operator=(const KeyPool&) = delete;

  protocol::KeyTake take(Rng& rng) override;
  // Adds one pair if below capacity. Returns false when already full.
  bool refill_once();
  void start_background();
  void stop_background();
  bool wait_until_full(std::chrono::milliseconds timeout);

  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  int bits() const { return bits_; }
  std::uint64_t served_from_pool() const { return from_pool_.load(); }
  std::uint64_t generated_inline() const { return inline_.load(); }

 private:
  void producer_loop();

  const int bits_;
  const std::size_t capacity_;
  std::mutex producer_mu_;
  Rng producer_rng_;
  mutable std::mutex mu_;
  std::condition_variable changed_;
  std::deque<crypto::KeyPair> queue_;
  bool stopping_ = false;
  std::thread producer_;
  std::atomic<std::uint64_t> from_pool_{0}, inline_{0};
};

// ---- daemon -----------------------------------------------------------------

struct HomeServerConfig {
  std::string bind = "127.0.0.1";
  std::uint16_t port = 0;
  std::size_t max_concurrent = 64;
  int key_bits = crypto::kDefaultKeyBits;
  std::int64_t cert_validity_seconds = cert::kDefaultValiditySeconds;
  wire::Suite suite = wire::Suite::kModern;
  std::size_t keypool_size = 0;
  std::string issuer_id = "home";
  std::int64_t handshake_timeout_ms = 10'000;
  std::filesystem::path user_db = "users.db";
  std::filesystem::path server_key = "home.key";
  std::filesystem::path log;  // empty: stderr

  // Throws Error(kConfig).
  static HomeServerConfig from_kv(const io::KeyValueConfig& kv);
  static HomeServerConfig load(const std::filesystem::path& path);
};

// Latency buckets (upper bounds, ms); the last bucket is unbounded.
inline constexpr std::array<std::int64_t, 13> kLatencyBucketsMs = {
    1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000};

class LatencyHistogram {
 public:
  void record_us(std::int64_t us);
  std::array<std::uint64_t, kLatencyBucketsMs.size() + 1> buckets() const;
  std::uint64_t count() const { return count_.load(); }
  std::int64_t total_us() const { return total_us_.load(); }

 private:
  std::array<std::atomic<std::uint64_t>, kLatencyBucketsMs.size() + 1> buckets_{};
  std::atomic<std::uint64_t> count_{0};
  std::atomic<std::int64_t> total_us_{0};
};

struct HomeCounters {
  std::uint64_t started = 0;
  std::uint64_t completed = 0;
  std::uint64_t refused = 0;
  std::map<std::string, std::uint64_t> failed;  // by reason
  std::uint64_t issued_from_pool = 0;
  std::uint64_t issued_inline = 0;
  std::int64_t issuance_us_total = 0;
  std::int64_t keygen_us_total = 0;
  std::array<std::uint64_t, kLatencyBucketsMs.size() + 1> issuance_histogram{};

  // Mean share of issuance latency spent generating keys.
  double keygen_share() const {
    return issuance_us_total > 0 ? static_cast<double>(keygen_us_total) / issuance_us_total : 0.0;
  }
};

class HomeServer {
 public:
  HomeServer(HomeServerConfig cfg, std::shared_ptr<const UserDirectory> users,
             crypto::KeyPair server_keys, io::Logger* log = nullptr);
  ~HomeServer();
  HomeServer(const HomeServer&) = delete;
  HomeServer& operator=(const HomeServer&) = delete;

  // Binds and starts accepting. Throws Error(kNetwork) if the bind fails.
  void start();
  // Stops accepting, lets in-flight handshakes finish (bounded by the
  // handshake timeout), then returns.
  void stop();
  std::uint16_t port() const { return port_; }
  HomeCounters counters() const;
  KeyPool* key_pool() { return pool_.get(); }
  const crypto::PublicKey& public_key() const { return server_keys_.pub; }

 private:
  void accept_loop();
  void serve_connection(net::Socket sock, std::size_t in_flight_before, std::uint64_t conn_id);
  void record_failure(Errc code);

  HomeServerConfig cfg_;
  std::shared_ptr<const UserDirectory> users_;
  crypto::KeyPair server_keys_;
  io::Logger* log_;
  SystemClock clock_;
  std::unique_ptr<KeyPool> pool_;
  protocol::ReplayCache replay_;
  std::unique_ptr<protocol::HomeContext> ctx_;

  std::mutex rng_mu_;
  Rng master_rng_;
  std::unique_ptr<net::Listener> listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex conns_mu_;
  struct Conn {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };
  std::vector<Conn> conns_;
  std::atomic<std::size_t> in_flight_{0};

  std::atomic<std::uint64_t> started_{0}, completed_{0}, refused_{0}, from_pool_{0},
      inline_{0};
  std::atomic<std::int64_t> keygen_us_total_{0};
  LatencyHistogram issuance_;
  mutable std::mutex failed_mu_;
  std::map<std::string, std::uint64_t> failed_;
};

}  // namespace sso::home
