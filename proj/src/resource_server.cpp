#include "sso/resource_server.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "sso/keyfile.hpp"
#include "sso/tlv.hpp"

namespace sso::resource {

namespace fs = std::filesystem;

namespace {
constexpr std::size_t kMaxResourceName = 255;
}

// ---- rules ------------------------------------------------------------------------

void RuleSet::add(ResourceRule rule) {
  if (rule.resource.empty() || rule.resource.size() > kMaxResourceName) {
    throw Error(Errc::kParameter, "resource name must be 1..255 bytes");
  }
  if (rules_.count(rule.resource) != 0) {
    throw Error(Errc::kParameter, fmt::format("duplicate rule for '{}'", rule.resource));
  }
  std::string key = rule.resource;
  rules_.emplace(std::move(key), std::move(rule.required));
}

const cert::Role* RuleSet::required_for(std::string_view resource) const {
  auto it = rules_.find(resource);
  return it == rules_.end() ? nullptr : &it->second;
}

std::vector<ResourceRule> RuleSet::rules() const {
  std::vector<ResourceRule> out;
  for (const auto& [name, role] : rules_) out.push_back(ResourceRule{name, role});
  return out;
}

RuleSet RuleSet::parse(std::string_view text) {
  RuleSet set;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto strip = [](std::string_view s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
      return s;
    };
    line = strip(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::kConfig, fmt::format("rules line {}: expected resource=role", line_no));
    }
    std::string_view name = strip(line.substr(0, eq));
    std::string_view role = strip(line.substr(eq + 1));
    if (!cert::Role::is_valid(role)) {
      throw Error(Errc::kConfig, fmt::format("rules line {}: invalid role '{}'", line_no, role));
    }
    try {
      set.add(ResourceRule{std::string(name), cert::Role(std::string(role))});
    } catch (const Error& e) {
      throw Error(Errc::kConfig, fmt::format("rules line {}: {}", line_no, e.what()));
    }
  }
  return set;
}

RuleSet RuleSet::load(const fs::path& path) {
  try {
    return parse(io::read_file(path));
  } catch (const Error& e) {
    if (e.code() == Errc::kConfig) throw;
    throw Error(Errc::kConfig, e.what());
  }
}

// ---- application messages -----------------------------------------------------------

std::string_view to_string(Status s) {
  switch (s) {
    case Status::kOk: return "ok";
    case Status::kInsufficientRole: return "insufficient-role";
    case Status::kUnknownResource: return "unknown-resource";
  }
  return "unknown";
}

Bytes AppRequest::encode() const {
  tlv::Writer w;
  w.put_string(1, resource).put(2, body);
  return w.finish();
}

AppRequest AppRequest::decode(ByteView b) {
  tlv::Reader r(b);
  AppRequest req;
  req.resource = r.expect_string(1, kMaxResourceName);
  ByteView body = r.expect(2);
  req.body.assign(body.begin(), body.end());
  r.finish();
  return req;
}

Bytes AppResponse::encode() const {
  tlv::Writer w;
  w.put_u8(1, static_cast<std::uint8_t>(status)).put(2, body);
  return w.finish();
}

AppResponse AppResponse::decode(ByteView b) {
  tlv::Reader r(b);
  AppResponse resp;
  std::uint8_t s = r.expect_u8(1);
  if (s > 2) throw Error(Errc::kMalformed, "unknown response status");
  resp.status = static_cast<Status>(s);
  ByteView body = r.expect(2);
  resp.body.assign(body.begin(), body.end());
  r.finish();
  return resp;
}

AppResponse handle_request(const protocol::SessionContext& session, const RuleSet& rules,
                           const AppRequest& request) {
  const cert::Role* required = rules.required_for(request.resource);
  if (required == nullptr) return AppResponse{Status::kUnknownResource, {}};
  if (std::find(session.roles.begin(), session.roles.end(), *required) == session.roles.end()) {
    return AppResponse{Status::kInsufficientRole, {}};
  }
  AppResponse resp{Status::kOk, to_bytes(request.resource + ":")};
  resp.body.insert(resp.body.end(), request.body.begin(), request.body.end());
  return resp;
}

wire::AppData seal_request(const crypto::SymKey& key, const AppRequest& req, Rng& rng) {
  Bytes plain = req.encode();
  wire::AppData out{crypto::sym_encrypt(key, plain, rng)};
  secure_wipe(plain);
  return out;
}

AppRequest open_request(const crypto::SymKey& key, const wire::AppData& data) {
  Bytes plain = crypto::sym_decrypt(key, data.ciphertext);
  AppRequest req = AppRequest::decode(plain);
  secure_wipe(plain);
  return req;
}

wire::AppData seal_response(const crypto::SymKey& key, const AppResponse& resp, Rng& rng) {
  Bytes plain = resp.encode();
  wire::AppData out{crypto::sym_encrypt(key, plain, rng)};
  secure_wipe(plain);
  return out;
}

AppResponse open_response(const crypto::SymKey& key, const wire::AppData& data) {
  Bytes plain = crypto::sym_decrypt(key, data.ciphertext);
  AppResponse resp = AppResponse::decode(plain);
  secure_wipe(plain);
  return resp;
}

// ---- session table ------------------------------------------------------------------

void SessionTable::add(std::uint64_t conn_id, protocol::SessionContext session) {
  std::lock_guard lock(mu_);
  sessions_[conn_id] = std::move(session);
}

void SessionTable::remove(std::uint64_t conn_id) {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(conn_id);
  if (it == sessions_.end()) return;
  it->second.session_key.wipe();
  sessions_.erase(it);
}

std::optional<protocol::SessionContext> SessionTable::find(std::uint64_t conn_id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(conn_id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

std::size_t SessionTable::size() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

// ---- config -------------------------------------------------------------------------

ResourceServerConfig ResourceServerConfig::from_kv(const io::KeyValueConfig& kv) {
  kv.check_known({"bind", "port", "max_concurrent", "suite", "handshake_timeout_ms",
                  "idle_timeout_ms", "context_tag", "server_key", "server_cert", "anchor", "rules",
                  "log"});
  ResourceServerConfig c;
  c.bind = kv.get("bind", c.bind);
  std::int64_t port = kv.get_int("port", 0);
  if (port < 0 || port > 65535) throw Error(Errc::kConfig, "port out of range");
  c.port = static_cast<std::uint16_t>(port);
  std::int64_t maxc = kv.get_int("max_concurrent", static_cast<std::int64_t>(c.max_concurrent));
  if (maxc < 1) throw Error(Errc::kConfig, "max_concurrent must be at least 1");
  c.max_concurrent = static_cast<std::size_t>(maxc);
  auto suite = wire::suite_from_name(kv.get("suite", "modern"));
  if (!suite) throw Error(Errc::kConfig, "suite must be modern or legacy-3des");
  c.suite = *suite;
  c.handshake_timeout_ms = kv.get_int("handshake_timeout_ms", c.handshake_timeout_ms);
  c.idle_timeout_ms = kv.get_int("idle_timeout_ms", c.idle_timeout_ms);
  if (c.handshake_timeout_ms <= 0 || c.idle_timeout_ms <= 0) {
    throw Error(Errc::kConfig, "timeouts must be positive");
  }
  c.context_tag = kv.get("context_tag", c.context_tag);
  c.server_key = kv.get_path("server_key", c.server_key);
  c.server_cert = kv.get_path("server_cert", c.server_cert);
  c.anchor = kv.get_path("anchor", c.anchor);
  c.rules = kv.get_path("rules", c.rules);
  c.log = kv.get_path("log", {});
  return c;
}

ResourceServerConfig ResourceServerConfig::load(const fs::path& path) {
  return from_kv(io::KeyValueConfig::load(path));
}

std::unique_ptr<ResourceServer> make_resource_server(const ResourceServerConfig& cfg,
                                                     io::Logger* log) {
  crypto::KeyPair keys = load_key_file(cfg.server_key);
  Bytes certificate = load_certificate_file(cfg.server_cert);
  if (!(cert::decode(certificate).body.subject_public_key == keys.pub)) {
    throw Error(Errc::kConfig, "server certificate does not match the server key");
  }
  cert::TrustAnchor anchor = load_anchor_file(cfg.anchor);
  cert::TrustStore trust;
  trust.add(anchor.issuer_id, anchor.key);
  RuleSet rules = RuleSet::load(cfg.rules);
  return std::make_unique<ResourceServer>(cfg, std::move(certificate), std::move(keys),
                                          std::move(trust), std::move(rules), log);
}

// ---- daemon ---------------------------------------------------------------------------

ResourceServer::ResourceServer(ResourceServerConfig cfg, Bytes server_certificate,
                               crypto::KeyPair server_keys, cert::TrustStore trust, RuleSet rules,
                               io::Logger* log)
    : cfg_(std::move(cfg)),
      server_certificate_(std::move(server_certificate)),
      server_keys_(std::move(server_keys)),
      trust_(std::move(trust)),
      rules_(std::move(rules)),
      log_(log),
      replay_(cfg_.handshake_timeout_ms),
      master_rng_(Rng::from_entropy()) {
  protocol::ProtocolConfig pc;
  pc.suite = cfg_.suite;
  pc.handshake_timeout_ms = cfg_.handshake_timeout_ms;
  ctx_.reset(new protocol::ResourceContext{server_certificate_, server_keys_, trust_, replay_, pc,
                                           cfg_.context_tag});
}

ResourceServer::~ResourceServer() { stop(); }

void ResourceServer::start() {
  listener_ = std::make_unique<net::Listener>(cfg_.bind, cfg_.port);
  port_ = listener_->port();
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
  if (log_) {
    log_->event("listening", {{"addr", fmt::format("{}:{}", cfg_.bind, port_)},
                              {"suite", std::string(wire::suite_name(cfg_.suite))},
                              {"rules", std::to_string(rules_.size())}});
  }
}

void ResourceServer::stop() {
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
  if (log_) log_->event("stopped", {});
}

void ResourceServer::accept_loop() {
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
    auto done = std::make_shared<std::atomic<bool>>(false);
    std::uint64_t id = next_id++;
    std::lock_guard lock(conns_mu_);
    conns_.push_back(Conn{std::thread([this, s = std::move(*sock), id, done]() mutable {
                            serve_connection(std::move(s), id);
                            done->store(true);
                          }),
                          done});
  }
}

void ResourceServer::record_failure(Errc code) {
  std::lock_guard lock(failed_mu_);
  ++failed_[std::string(to_string(code))];
}

void ResourceServer::serve_connection(net::Socket sock, std::uint64_t conn_id) {
  ++started_;
  std::size_t before = handshakes_in_flight_.fetch_add(1);
  bool counted = true;
  auto release = [&] {
    if (counted) --handshakes_in_flight_;
    counted = false;
  };
  Rng rng = [&] {
    std::lock_guard lock(rng_mu_);
    return master_rng_.fork("conn");
  }();
  protocol::ResourceHandshake hs(*ctx_, clock_);
  protocol::Limits limits{before, cfg_.max_concurrent};
  wire::FrameStream stream(sock);
  std::optional<Errc> failure;
  std::string peer;
  std::uint64_t served = 0;

  try {
    const std::int64_t deadline = clock_.now_ms() + cfg_.handshake_timeout_ms;
    while (hs.phase() != protocol::ResourceHandshake::Phase::kEstablished) {
      std::int64_t remaining = deadline - clock_.now_ms();
      if (remaining <= 0) throw Error(Errc::kTimeout, "handshake timed out");
      sock.set_read_timeout_ms(static_cast<int>(remaining));
      auto frame = stream.read();
      if (!frame) throw Error(Errc::kNetwork, "peer closed during handshake");
      if (frame->suite != cfg_.suite) throw Error(Errc::kUnknownVersion, "suite mismatch");
      protocol::ServerStep step =
          hs.handle(wire::decode_payload(frame->type, frame->payload), limits, rng);
      if (step.reply) stream.write(wire::to_frame(*step.reply, cfg_.suite));
      if (step.failure) {
        failure = step.failure;
        break;
      }
    }
    if (!failure) {
      release();
      const protocol::SessionContext& session = *hs.session();
      peer = session.peer_username;
      sessions_.add(conn_id, session);
      ++established_;
      if (log_) {
        log_->event("access", {{"conn", std::to_string(conn_id)},
                               {"user", peer},
                               {"outcome", "established"},
                               {"roles", cert::join_roles(session.roles)}});
      }
      // Short read slices so stop() is not held up by idle sessions.
      sock.set_read_timeout_ms(static_cast<int>(std::min<std::int64_t>(cfg_.idle_timeout_ms, 200)));
      std::int64_t idle_deadline = clock_.now_ms() + cfg_.idle_timeout_ms;
      for (;;) {
        std::optional<wire::Frame> frame;
        try {
          frame = stream.read();
        } catch (const Error& e) {
          if (e.code() != Errc::kTimeout) throw;
          if (stopping_) break;
          if (clock_.now_ms() >= idle_deadline) throw;
          continue;
        }
        if (!frame) break;
        idle_deadline = clock_.now_ms() + cfg_.idle_timeout_ms;
        if (frame->suite != cfg_.suite || frame->type != wire::MsgType::kAppData) {
          throw Error(Errc::kProtocolOrder, "expected application data");
        }
        auto data = std::get<wire::AppData>(wire::decode_payload(frame->type, frame->payload));
        AppRequest req = open_request(session.session_key, data);
        AppResponse resp = handle_request(session, rules_, req);
        ++requests_;
        ++served;
        if (resp.status == Status::kOk) ++granted_;
        else ++denied_;
        if (log_) {
          log_->event("request", {{"conn", std::to_string(conn_id)},
                                  {"user", peer},
                                  {"resource", req.resource},
                                  {"status", std::string(to_string(resp.status))}});
        }
        stream.write(wire::to_frame(seal_response(session.session_key, resp, rng), cfg_.suite));
      }
    }
  } catch (const Error& e) {
    failure = e.code();
  }
  release();
  hs.close();
  sessions_.remove(conn_id);

  if (failure) {
    bool established = hs.phase() == protocol::ResourceHandshake::Phase::kEstablished;
    if (*failure == Errc::kAtCapacity) ++refused_;
    record_failure(*failure);
    if (log_) {
      log_->event("access", {{"conn", std::to_string(conn_id)},
                             {"user", peer},
                             {"outcome", established ? "closed" : "failed"},
                             {"reason", std::string(to_string(*failure))},
                             {"requests", std::to_string(served)}});
    }
  }
  sock.close();
}

ResourceCounters ResourceServer::counters() const {
  ResourceCounters c;
  c.started = started_.load();
  c.established = established_.load();
  c.refused = refused_.load();
  c.requests = requests_.load();
  c.granted = granted_.load();
  c.denied = denied_.load();
  std::lock_guard lock(failed_mu_);
  c.failed = failed_;
  return c;
}

}  // namespace sso::resource
