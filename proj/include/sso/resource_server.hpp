#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "sso/io.hpp"
#include "sso/net.hpp"
#include "sso/protocol.hpp"

namespace sso::resource {

// ---- access rules -------------------------------------------------------------

struct ResourceRule {
  std::string resource;
  cert::Role required;
};

class RuleSet {
 public:
  // Throws Error(kParameter) for a duplicate or empty resource name.
  void add(ResourceRule rule);
  const cert::Role* required_for(std::string_view resource) const;
  std::size_t size() const { return rules_.size(); }
  std::vector<ResourceRule> rules() const;

  // `resource=role` lines, '#' comments. Throws Error(kConfig) naming the line.
  static RuleSet parse(std::string_view text);
  static RuleSet load(const std::filesystem::path& path);

 private:
  std::map<std::string, cert::Role, std::less<>> rules_;
};

// ---- application messages ---------------------------------------------------------

enum class Status : std::uint8_t {
  kOk = 0,
  kInsufficientRole = 1,
  kUnknownResource = 2,
};
std::string_view to_string(Status s);

struct AppRequest {
  std::string resource;
  Bytes body;

  Bytes encode() const;
  static AppRequest decode(ByteView b);
  friend bool operator==(const AppRequest&, const AppRequest&) = default;
};

struct AppResponse {
  Status status = Status::kOk;
  Bytes body;

  Bytes encode() const;
  static AppResponse decode(ByteView b);
  friend bool operator==(const AppResponse&, const AppResponse&) = default;
};

// Granted iff the resource's required role is among the session roles. The
// demo service echoes "<resource>:" followed by the request body.
AppResponse handle_request(const protocol::SessionContext& session, const RuleSet& rules,
                           const AppRequest& request);

// Symmetric envelopes under the session key. open_* throw
// Error(kAuthentication) on any tampering and kMalformed on bad plaintext.
wire::AppData seal_request(const crypto::SymKey& key, const AppRequest& req, Rng& rng);
AppRequest open_request(const crypto::SymKey& key, const wire::AppData& data);
wire::AppData seal_response(const crypto::SymKey& key, const AppResponse& resp, Rng& rng);
AppResponse open_response(const crypto::SymKey& key, const wire::AppData& data);

// ---- sessions ----------------------------------------------------------------------

// Live sessions by connection id. Keys are wiped when an entry is removed.
class SessionTable {
 public:
  void add(std::uint64_t conn_id, protocol::SessionContext session);
  void remove(std::uint64_t conn_id);
  std::optional<protocol::SessionContext> find(std::uint64_t conn_id) const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::uint64_t, protocol::SessionContext> sessions_;
};

// ---- daemon --------------------------------------------------------------------------

struct ResourceServerConfig {
  std::string bind = "127.0.0.1";
  std::uint16_t port = 0;
  std::size_t max_concurrent = 64;
  wire::Suite suite = wire::Suite::kModern;
  std::int64_t handshake_timeout_ms = 10'000;
  std::int64_t idle_timeout_ms = 60'000;
  std::string context_tag = "resource";
  std::filesystem::path server_key = "resource.key";
  std::filesystem::path server_cert = "resource.cert";
  std::filesystem::path anchor = "home.anchor";
  std::filesystem::path rules = "rules.txt";
  std::filesystem::path log;

  static ResourceServerConfig from_kv(const io::KeyValueConfig& kv);
  static ResourceServerConfig load(const std::filesystem::path& path);
};

struct ResourceCounters {
  std::uint64_t started = 0;
  std::uint64_t established = 0;
  std::uint64_t refused = 0;
  std::uint64_t requests = 0;
  std::uint64_t granted = 0;
  std::uint64_t denied = 0;
  std::map<std::string, std::uint64_t> failed;
};

class ResourceServer {
 public:
  ResourceServer(ResourceServerConfig cfg, Bytes server_certificate, crypto::KeyPair server_keys,
                 cert::TrustStore trust, RuleSet rules, io::Logger* log = nullptr);
  ~ResourceServer();
  ResourceServer(const ResourceServer&) = delete;
  ResourceServer& operator=(const ResourceServer&) = delete;

  void start();
  void stop();
  std::uint16_t port() const { return port_; }
  ResourceCounters counters() const;
  const SessionTable& sessions() const { return sessions_; }

 private:
  void accept_loop();
  void serve_connection(net::Socket sock, std::uint64_t conn_id);
  void record_failure(Errc code);

  ResourceServerConfig cfg_;
  Bytes server_certificate_;
  crypto::KeyPair server_keys_;
  cert::TrustStore trust_;
  RuleSet rules_;
  io::Logger* log_;
  SystemClock clock_;
  protocol::ReplayCache replay_;
  std::unique_ptr<protocol::ResourceContext> ctx_;
  SessionTable sessions_;

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
  std::atomic<std::size_t> handshakes_in_flight_{0};

  std::atomic<std::uint64_t> started_{0}, established_{0}, refused_{0}, requests_{0},
      granted_{0}, denied_{0};
  mutable std::mutex failed_mu_;
  std::map<std::string, std::uint64_t> failed_;
};

// Loads cert, key, anchor and rules named by the config. Throws Error(kConfig).
std::unique_ptr<ResourceServer> make_resource_server(const ResourceServerConfig& cfg,
                                                     io::Logger* log);

}  // namespace sso::resource
