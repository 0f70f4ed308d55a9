#include "sso/harness.hpp"

#include <algorithm>
#include <memory>
#include <mutex>
#include <queue>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "sso/home_server.hpp"
#include "sso/io.hpp"

namespace sso::sim {

namespace {

constexpr std::uint64_t kHomeKeyIndex = 1'000'000;
constexpr std::uint64_t kResourceKeyIndex = 1'000'100;
constexpr std::uint64_t kRogueKeyIndex = 2'000'000;
constexpr std::int64_t kServerCertValidity = 365LL * 24 * 3600;

// Client keypairs for issuance, drawn in order from the shared bank.
class KeyBank final : public protocol::KeySource {
 public:
  explicit KeyBank(int bits) : bits_(bits) {}
  protocol::KeyTake take(Rng&) override {
    protocol::KeyTake t;
    t.keys = bank_keypair(bits_, next_++);
    t.from_pool = true;
    return t;
  }

 private:
  int bits_;
  std::uint64_t next_ = 0;
};

std::optional<wire::MsgType> frame_type(ByteView frame) {
  if (frame.size() < wire::kHeaderSize || !wire::is_known_type(frame[3])) return std::nullopt;
  return static_cast<wire::MsgType>(frame[3]);
}

bool is_handshake(wire::MsgType t) { return t != wire::MsgType::kAppData; }

std::string server_name(int index) {
  return index == 0 ? std::string("home") : fmt::format("res{}", index);
}

}  // namespace

// ---- keys ---------------------------------------------------------------------------

const crypto::KeyPair& bank_keypair(int bits, std::uint64_t index) {
  static std::mutex mu;
  static std::map<std::pair<int, std::uint64_t>, crypto::KeyPair> bank;
  std::lock_guard lock(mu);
  auto it = bank.find({bits, index});
  if (it == bank.end()) {
    Rng rng = Rng::from_seed(0x6b657962616e6bULL ^ (index * 1315423911ULL + static_cast<std::uint64_t>(bits)));
    it = bank.emplace(std::make_pair(bits, index), crypto::gen_keypair(bits, rng)).first;
  }
  return it->second;
}

// ---- configuration types -----------------------------------------------------------

void NetConfig::validate() const {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::kParameter, fmt::format("{} must be in [0,1]", what));
  };
  prob(loss, "loss");
  prob(duplicate, "duplicate");
  if (delay_min_ms < 0 || delay_max_ms < delay_min_ms) {
    throw Error(Errc::kParameter, "delay range must satisfy 0 <= min <= max");
  }
  if (reorder_ms < 0) throw Error(Errc::kParameter, "reorder must be non-negative");
}

MsgPattern MsgPattern::parse(std::string_view text) {
  MsgPattern p;
  std::string_view name = text;
  if (auto hash = text.find('#'); hash != std::string_view::npos) {
    name = text.substr(0, hash);
    std::string_view num = text.substr(hash + 1);
    int n = 0;
    for (char c : num) {
      if (c < '0' || c > '9') throw Error(Errc::kParameter, fmt::format("bad pattern '{}'", text));
      n = n * 10 + (c - '0');
      if (n > 1'000'000) throw Error(Errc::kParameter, "occurrence too large");
    }
    if (num.empty() || n == 0) throw Error(Errc::kParameter, fmt::format("bad pattern '{}'", text));
    p.occurrence = n;
  }
  if (name != "*") {
    p.type = wire::type_from_short_name(name);
    if (!p.type) throw Error(Errc::kParameter, fmt::format("unknown message '{}'", name));
  }
  return p;
}

std::string MsgPattern::to_string() const {
  std::string s = type ? std::string(wire::short_name(*type)) : "*";
  if (occurrence > 0) s += fmt::format("#{}", occurrence);
  return s;
}

void AdversaryScript::validate() const {
  std::size_t record_actions = 0;
  for (const auto& a : actions) {
    if (std::holds_alternative<Record>(a)) ++record_actions;
    if (const auto* r = std::get_if<Replay>(&a)) {
      if (record_actions == 0) {
        throw Error(Errc::kParameter,
                    fmt::format("replay {} comes before any record action", r->index));
      }
      if (r->at_ms < 0) throw Error(Errc::kParameter, "replay time must be non-negative");
    }
  }
}

void Scenario::validate() const {
  net.validate();
  adversary.validate();
  if (resource_servers < 0) throw Error(Errc::kParameter, "resource server count is negative");
  if (key_bits != 1024 && key_bits != 2048) throw Error(Errc::kParameter, "key bits must be 1024 or 2048");
  if (max_time_ms <= 0) throw Error(Errc::kParameter, "max time must be positive");
  std::set<std::string> names;
  for (const auto& u : users) {
    if (!names.insert(u.name).second) {
      throw Error(Errc::kParameter, fmt::format("user '{}' defined twice", u.name));
    }
  }
  for (const auto& c : clients) {
    if (c.user.empty()) throw Error(Errc::kParameter, "client without a username");
    for (const auto& a : c.accesses) {
      if (a.server < 1 || a.server > resource_servers) {
        throw Error(Errc::kParameter,
                    fmt::format("client {} targets resource server {} of {}", c.user, a.server,
                                resource_servers));
      }
    }
  }
  std::set<std::string> resources;
  for (const auto& r : rules) {
    if (!resources.insert(r.resource).second) {
      throw Error(Errc::kParameter, fmt::format("duplicate rule for '{}'", r.resource));
    }
  }
}

namespace {

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::int64_t to_int(const std::string& s) {
  std::size_t used = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(s, &used, 0);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw Error(Errc::kParameter, fmt::format("'{}' is not an integer", s));
  return v;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw Error(Errc::kParameter, fmt::format("'{}' is not a number", s));
  return v;
}

ForgeKind forge_from_name(const std::string& s) {
  if (s == "rogue-issuer") return ForgeKind::kRogueIssuer;
  if (s == "altered-roles") return ForgeKind::kAlteredRoles;
  if (s == "altered-subject") return ForgeKind::kAlteredSubject;
  if (s == "other-party") return ForgeKind::kOtherParty;
  throw Error(Errc::kParameter, fmt::format("unknown forgery '{}'", s));
}

}  // namespace

Scenario Scenario::parse(std::string_view text) {
  Scenario sc;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (auto hash = line.find(" #"); hash != std::string_view::npos) line = line.substr(0, hash);
    if (!line.empty() && line.front() == '#') continue;
    std::vector<std::string> w = split_words(line);
    if (w.empty()) continue;
    try {
      const std::string& k = w[0];
      auto need = [&](std::size_t n) {
        if (w.size() < n + 1) {
          throw Error(Errc::kParameter, fmt::format("'{}' needs {} argument(s)", k, n));
        }
      };
      if (k == "loss") {
        need(1);
        sc.net.loss = to_double(w[1]);
      } else if (k == "duplicate") {
        need(1);
        sc.net.duplicate = to_double(w[1]);
      } else if (k == "delay") {
        need(2);
        sc.net.delay_min_ms = to_int(w[1]);
        sc.net.delay_max_ms = to_int(w[2]);
      } else if (k == "reorder") {
        need(1);
        sc.net.reorder_ms = to_int(w[1]);
      } else if (k == "max-time") {
        need(1);
        sc.max_time_ms = to_int(w[1]);
      } else if (k == "suite") {
        need(1);
        auto s = wire::suite_from_name(w[1]);
        if (!s) throw Error(Errc::kParameter, fmt::format("unknown suite '{}'", w[1]));
        sc.protocol.suite = *s;
      } else if (k == "timeout") {
        need(1);
        sc.protocol.handshake_timeout_ms = to_int(w[1]);
      } else if (k == "retries") {
        need(1);
        sc.protocol.max_retries = static_cast<int>(to_int(w[1]));
      } else if (k == "retry-base") {
        need(1);
        sc.protocol.retry_base_ms = to_int(w[1]);
      } else if (k == "key-bits") {
        need(1);
        sc.key_bits = static_cast<int>(to_int(w[1]));
      } else if (k == "validity") {
        need(1);
        sc.cert_validity_seconds = to_int(w[1]);
      } else if (k == "resources") {
        need(1);
        sc.resource_servers = static_cast<int>(to_int(w[1]));
      } else if (k == "home-max") {
        need(1);
        sc.home_max_concurrent = static_cast<std::size_t>(to_int(w[1]));
      } else if (k == "resource-max") {
        need(1);
        sc.resource_max_concurrent = static_cast<std::size_t>(to_int(w[1]));
      } else if (k == "seed") {
        need(1);
        sc.seed = static_cast<std::uint64_t>(to_int(w[1]));
      } else if (k == "rule") {
        need(2);
        sc.rules.push_back({w[1], cert::Role(w[2])});
      } else if (k == "user") {
        need(3);
        sc.users.push_back({w[1], w[2], w[3] == "-" ? std::vector<cert::Role>{}
                                                    : cert::parse_roles(w[3])});
      } else if (k == "client") {
        need(2);
        ClientSpec c{w[1], w[2], 0, {}};
        for (std::size_t i = 3; i < w.size(); ++i) {
          if (w[i].rfind("start=", 0) == 0) {
            c.start_ms = to_int(w[i].substr(6));
          } else if (w[i].rfind("access=", 0) == 0) {
            std::string spec = w[i].substr(7);
            auto a = spec.find(':');
            auto b = a == std::string::npos ? a : spec.find(':', a + 1);
            if (b == std::string::npos) {
              throw Error(Errc::kParameter, "access needs SERVER:RESOURCE:BODY");
            }
            c.accesses.push_back({static_cast<int>(to_int(spec.substr(0, a))),
                                  spec.substr(a + 1, b - a - 1), spec.substr(b + 1)});
          } else {
            throw Error(Errc::kParameter, fmt::format("unknown client option '{}'", w[i]));
          }
        }
        sc.clients.push_back(std::move(c));
      } else if (k == "record") {
        need(1);
        sc.adversary.actions.push_back(Record{MsgPattern::parse(w[1])});
      } else if (k == "replay") {
        need(3);
        if (w[2] != "at") throw Error(Errc::kParameter, "expected: replay INDEX at MS [new|same]");
        Replay r;
        r.index = static_cast<std::size_t>(to_int(w[1]));
        r.at_ms = to_int(w[3]);
        if (w.size() > 4) {
          if (w[4] == "new") r.mode = ReplayMode::kNewConnection;
          else if (w[4] != "same") throw Error(Errc::kParameter, "replay mode must be new or same");
        }
        sc.adversary.actions.push_back(r);
      } else if (k == "tamper") {
        need(2);
        Tamper t;
        t.pattern = MsgPattern::parse(w[1]);
        t.offset = static_cast<std::size_t>(to_int(w[2]));
        if (w.size() > 3) {
          std::int64_t m = to_int(w[3]);
          if (m < 1 || m > 255) throw Error(Errc::kParameter, "mask must be 1..255");
          t.mask = static_cast<std::uint8_t>(m);
        }
        sc.adversary.actions.push_back(t);
      } else if (k == "substitute-cert") {
        need(2);
        sc.adversary.actions.push_back(SubstituteCert{MsgPattern::parse(w[1]), forge_from_name(w[2])});
      } else if (k == "drop") {
        need(1);
        sc.adversary.actions.push_back(Drop{MsgPattern::parse(w[1])});
      } else {
        throw Error(Errc::kParameter, fmt::format("unknown directive '{}'", k));
      }
      sc.net.validate();
    } catch (const Error& e) {
      throw Error(Errc::kConfig, fmt::format("scenario line {}: {}", line_no, e.what()));
    }
  }
  try {
    sc.validate();
  } catch (const Error& e) {
    throw Error(Errc::kConfig, fmt::format("scenario: {}", e.what()));
  }
  return sc;
}

Scenario Scenario::load(const std::filesystem::path& path) {
  try {
    return parse(io::read_file(path));
  } catch (const Error& e) {
    if (e.code() == Errc::kConfig) throw;
    throw Error(Errc::kConfig, e.what());
  }
}

Scenario happy_path_scenario() {
  Scenario sc;
  sc.users.push_back({"alice", "correct horse battery", {cert::Role("staff")}});
  sc.rules.push_back({"wiki", cert::Role("staff")});
  sc.rules.push_back({"payroll", cert::Role("admin")});
  sc.clients.push_back({"alice", "correct horse battery", 0, {{1, "wiki", "quarterly-report-body"}}});
  return sc;
}

// ---- transcript -------------------------------------------------------------------

std::string_view to_string(Fate f) {
  switch (f) {
    case Fate::kDelivered: return "delivered";
    case Fate::kDropped: return "dropped";
    case Fate::kDuplicated: return "duplicated";
    case Fate::kTampered: return "tampered";
    case Fate::kInjected: return "injected";
  }
  return "unknown";
}

std::optional<wire::MsgType> TranscriptEntry::type() const { return frame_type(frame); }

std::size_t Transcript::protocol_frames_delivered() const {
  std::size_t n = 0;
  for (const auto& e : entries) {
    auto t = e.type();
    if (t && is_handshake(*t) && e.fate != Fate::kDropped && e.fate != Fate::kDuplicated) ++n;
  }
  return n;
}

std::size_t Transcript::count(wire::MsgType type) const {
  std::size_t n = 0;
  for (const auto& e : entries) {
    if (e.type() == type) ++n;
  }
  return n;
}

Bytes Transcript::serialize() const {
  Bytes out;
  auto put_str = [&](const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  };
  for (const auto& e : entries) {
    put_u64(out, static_cast<std::uint64_t>(e.time_ms));
    put_str(e.sender);
    put_str(e.receiver);
    put_u64(out, e.connection);
    out.push_back(e.from_client ? 1 : 0);
    out.push_back(static_cast<std::uint8_t>(e.fate));
    put_u32(out, static_cast<std::uint32_t>(e.frame.size()));
    out.insert(out.end(), e.frame.begin(), e.frame.end());
  }
  return out;
}

std::string Transcript::to_text() const {
  std::string out;
  for (const auto& e : entries) {
    auto t = e.type();
    out += fmt::format("{:>8} {:>10} -> {:<10} conn={:<3} {:<4} {:<10} {} bytes\n", e.time_ms,
                       e.sender, e.receiver, e.connection, t ? wire::short_name(*t) : "?",
                       to_string(e.fate), e.frame.size());
  }
  return out;
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::kNotRun: return "not-run";
    case Outcome::kOk: return "ok";
    case Outcome::kDenied: return "denied";
    case Outcome::kFailed: return "failed";
    case Outcome::kGaveUp: return "gave-up";
    case Outcome::kClosed: return "closed";
    case Outcome::kTimedOut: return "timed-out";
  }
  return "unknown";
}

// ---- simulator ----------------------------------------------------------------------

namespace {

struct Event {
  enum class Kind { kDeliver, kClose, kClientStart, kClientTimer, kServerExpire, kReplay };
  std::int64_t at = 0;
  std::uint64_t seq = 0;
  Kind kind = Kind::kDeliver;
  std::uint64_t conn = 0;
  bool to_server = false;
  Bytes frame;
  int client = -1;
  std::uint64_t generation = 0;
  std::size_t index = 0;
  ReplayMode mode = ReplayMode::kSameConnection;
};

struct EventLater {
  bool operator()(const Event& a, const Event& b) const {
    return a.at != b.at ? a.at > b.at : a.seq > b.seq;
  }
};

struct Conn {
  std::uint64_t id = 0;
  std::string client_name;
  int client = -1;  // -1: adversary
  int server = 0;   // 0 home, 1..k resource servers
  bool server_open = true;
  bool client_open = true;
  std::unique_ptr<protocol::HomeHandshake> home;
  std::unique_ptr<protocol::ResourceHandshake> res;
  bool established = false;
  std::optional<Bytes> adversary_followup;
};

struct Recording {
  Bytes frame;
  std::uint64_t conn = 0;
  bool from_client = false;
};

struct HomeNode {
  home::UserDirectory users;
  crypto::KeyPair keys;
  KeyBank bank;
  protocol::ReplayCache replay;
  std::unique_ptr<protocol::HomeContext> ctx;
  Rng rng;
  HomeNode(int bits, std::int64_t ttl, Rng r) : bank(bits), replay(ttl), rng(std::move(r)) {}
};

struct ResourceNode {
  Bytes certificate;
  crypto::KeyPair keys;
  cert::TrustStore trust;
  protocol::ReplayCache replay;
  std::unique_ptr<protocol::ResourceContext> ctx;
  resource::RuleSet rules;
  Rng rng;
  ResourceNode(std::int64_t ttl, Rng r) : replay(ttl), rng(std::move(r)) {}
};

enum class Stage { kWaiting, kEnroll, kAccess, kApp, kDone };

struct ClientState {
  const ClientSpec* spec = nullptr;
  std::string name;
  Stage stage = Stage::kWaiting;
  std::size_t access_index = 0;
  std::optional<protocol::ClientEnrollment> enroll;
  std::optional<protocol::ClientAccess> access;
  std::optional<Bytes> certificate;
  crypto::KeyPair keys;
  std::uint64_t conn = 0;
  std::uint64_t generation = 0;
  std::optional<wire::AppData> pending_request;
  protocol::RetryTimer app_timer;
  Rng rng;
  explicit ClientState(Rng r) : rng(std::move(r)) {}
};

class Simulator {
 public:
  Simulator(const Scenario& sc, std::uint64_t seed)
      : sc_(sc), clock_(sc.start_unix_ms), master_(Rng::from_seed(seed)),
        net_rng_(master_.fork("net")), adversary_rng_(master_.fork("adversary")) {
    result_.seed = seed;
    build();
  }

  RunResult run() {
    for (std::size_t i = 0; i < clients_.size(); ++i) {
      Event e;
      e.kind = Event::Kind::kClientStart;
      e.client = static_cast<int>(i);
      schedule(clients_[i]->spec->start_ms, std::move(e));
    }
    for (const auto& a : sc_.adversary.actions) {
      if (const auto* r = std::get_if<Replay>(&a)) {
        Event e;
        e.kind = Event::Kind::kReplay;
        e.index = r->index;
        e.mode = r->mode;
        schedule(r->at_ms, std::move(e));
      }
    }
    while (!queue_.empty()) {
      Event ev = queue_.top();
      if (ev.at > sc_.max_time_ms) {
        result_.hit_max_time = true;
        break;
      }
      queue_.pop();
      now_ = ev.at;
      clock_.set_ms(sc_.start_unix_ms + now_);
      dispatch(ev);
    }
    result_.end_ms = now_;
    finish_pending();
    for (auto& c : clients_) result_.clients.push_back(std::move(c->report));
    return std::move(result_);
  }

 private:
  struct ClientSlot {
    const ClientSpec* spec;
    ClientState state;
    ClientReport report;
    ClientSlot(const ClientSpec* s, Rng r) : spec(s), state(std::move(r)) {}
  };

  // ---- setup -------------------------------------------------------------------

  void build() {
    home_ = std::make_unique<HomeNode>(sc_.key_bits, sc_.protocol.handshake_timeout_ms,
                                       master_.fork("home"));
    home_->keys = bank_keypair(sc_.key_bits, kHomeKeyIndex);
    for (const auto& u : sc_.users) {
      home_->users.add_user(u.name, u.password, u.roles, {}, home_->rng);
    }
    home_->ctx.reset(new protocol::HomeContext{
        home_->users, home_->keys, protocol::IssuerConfig{"home", sc_.cert_validity_seconds},
        home_->bank, home_->replay, sc_.protocol, "home"});
    trust_.add("home", home_->keys.pub);
    result_.home.name = "home";

    Rng setup = master_.fork("setup");
    for (int i = 1; i <= sc_.resource_servers; ++i) {
      auto node = std::make_unique<ResourceNode>(sc_.protocol.handshake_timeout_ms,
                                                 master_.fork(server_name(i)));
      node->keys = bank_keypair(sc_.key_bits, kResourceKeyIndex + static_cast<std::uint64_t>(i));
      node->certificate = cert::encode(cert::issue(home_->keys.sec, "home",
                                                   {server_name(i), "", "", ""}, {},
                                                   node->keys.pub, kServerCertValidity,
                                                   clock_, setup));
      node->trust = trust_;
      for (const auto& r : sc_.rules) node->rules.add(r);
      node->ctx.reset(new protocol::ResourceContext{node->certificate, node->keys, node->trust,
                                                    node->replay, sc_.protocol, server_name(i)});
      genuine_certs_.push_back(node->certificate);
      resources_.push_back(std::move(node));
      ServerReport rep;
      rep.name = server_name(i);
      result_.resources.push_back(rep);
    }
    for (std::size_t i = 0; i < sc_.clients.size(); ++i) {
      const ClientSpec& spec = sc_.clients[i];
      auto slot = std::make_unique<ClientSlot>(&spec, master_.fork(fmt::format("client{}", i + 1)));
      slot->state.name = fmt::format("client{}", i + 1);
      slot->report.name = slot->state.name;
      for (const auto& a : spec.accesses) {
        AccessOutcome o;
        o.intent = a;
        slot->report.accesses.push_back(o);
        if (!a.body.empty()) result_.secrets.bodies.push_back(to_bytes(a.body));
      }
      result_.secrets.passwords.push_back(spec.password);
      clients_.push_back(std::move(slot));
    }
    for (const auto& u : sc_.users) result_.secrets.passwords.push_back(u.password);
  }

  // ---- event plumbing -----------------------------------------------------------

  void schedule(std::int64_t at, Event e) {
    e.at = at;
    e.seq = next_seq_++;
    queue_.push(std::move(e));
  }

  void dispatch(const Event& ev) {
    switch (ev.kind) {
      case Event::Kind::kDeliver: deliver(ev); break;
      case Event::Kind::kClose: on_close(ev); break;
      case Event::Kind::kClientStart: start_client(ev.client); break;
      case Event::Kind::kClientTimer: client_timer(ev); break;
      case Event::Kind::kServerExpire: server_expire(ev.conn); break;
      case Event::Kind::kReplay: replay(ev); break;
    }
  }

  Conn& open_conn(int client, int server, std::string client_name) {
    auto c = std::make_unique<Conn>();
    c->id = next_conn_++;
    c->client = client;
    c->server = server;
    c->client_name = std::move(client_name);
    Conn& ref = *c;
    conns_.emplace(ref.id, std::move(c));
    return ref;
  }

  Conn* find_conn(std::uint64_t id) {
    auto it = conns_.find(id);
    return it == conns_.end() ? nullptr : it->second.get();
  }

  bool matches(const MsgPattern& p, wire::MsgType type) const {
    if (p.type && *p.type != type) return false;
    if (p.occurrence == 0) return true;
    std::size_t seen = p.type ? type_counts_.at(type) : total_sent_;
    return seen == static_cast<std::size_t>(p.occurrence);
  }

  void send(Conn& c, bool from_client, const wire::Message& msg) {
    transmit(c, from_client, wire::encode_msg(msg, sc_.protocol.suite), true);
  }

  void transmit(Conn& c, bool from_client, Bytes frame, bool honest) {
    Fate fate = honest ? Fate::kDelivered : Fate::kInjected;
    TranscriptEntry entry;
    entry.time_ms = now_;
    entry.sender = from_client ? c.client_name : server_name(c.server);
    entry.receiver = from_client ? server_name(c.server) : c.client_name;
    entry.connection = c.id;
    entry.from_client = from_client;

    if (honest) {
      auto type = frame_type(frame);
      if (type) {
        ++type_counts_[*type];
        ++total_sent_;
        for (const auto& action : sc_.adversary.actions) {
          if (const auto* r = std::get_if<Record>(&action)) {
            if (matches(r->pattern, *type)) recordings_.push_back({frame, c.id, from_client});
          } else if (const auto* d = std::get_if<Drop>(&action)) {
            if (matches(d->pattern, *type)) {
              entry.frame = std::move(frame);
              entry.fate = Fate::kDropped;
              result_.transcript.entries.push_back(std::move(entry));
              return;
            }
          } else if (const auto* s = std::get_if<SubstituteCert>(&action)) {
            if (matches(s->pattern, *type)) {
              if (auto forged = substitute(frame, s->kind)) {
                frame = std::move(*forged);
                fate = Fate::kTampered;
              }
            }
          } else if (const auto* t = std::get_if<Tamper>(&action)) {
            if (matches(t->pattern, *type)) {
              if (t->offset < frame.size()) {
                frame[t->offset] ^= t->mask;
                fate = Fate::kTampered;
              } else {
                result_.notes.push_back(fmt::format("tamper offset {} beyond {}-byte {}", t->offset,
                                                    frame.size(), wire::short_name(*type)));
              }
            }
          }
        }
      }
    }

    // Fixed draw order keeps the stream aligned whatever the outcome.
    const bool lost = net_rng_.bernoulli(sc_.net.loss);
    const std::int64_t d1 = draw_delay();
    const bool dup = net_rng_.bernoulli(sc_.net.duplicate);
    const std::int64_t d2 = draw_delay();
    if (!honest) {
      entry.frame = frame;
      entry.fate = fate;
      result_.transcript.entries.push_back(std::move(entry));
      enqueue_delivery(c, from_client, std::move(frame), d1);
      return;
    }
    entry.frame = frame;
    if (lost) {
      entry.fate = Fate::kDropped;
      result_.transcript.entries.push_back(std::move(entry));
      return;
    }
    entry.fate = fate;
    result_.transcript.entries.push_back(entry);
    enqueue_delivery(c, from_client, frame, d1);
    if (dup) {
      entry.fate = Fate::kDuplicated;
      result_.transcript.entries.push_back(std::move(entry));
      enqueue_delivery(c, from_client, std::move(frame), d2);
    }
  }

  std::int64_t draw_delay() {
    std::int64_t span = sc_.net.delay_max_ms - sc_.net.delay_min_ms;
    std::int64_t d = sc_.net.delay_min_ms +
                     static_cast<std::int64_t>(net_rng_.uniform(static_cast<std::uint64_t>(span) + 1));
    if (sc_.net.reorder_ms > 0) {
      d += static_cast<std::int64_t>(net_rng_.uniform(static_cast<std::uint64_t>(sc_.net.reorder_ms) + 1));
    }
    return d;
  }

  void enqueue_delivery(const Conn& c, bool to_server, Bytes frame, std::int64_t delay) {
    Event e;
    e.kind = Event::Kind::kDeliver;
    e.conn = c.id;
    e.to_server = to_server;
    e.frame = std::move(frame);
    schedule(now_ + delay, std::move(e));
  }

  void close_side(Conn& c, bool server_side) {
    bool& open = server_side ? c.server_open : c.client_open;
    if (!open) return;
    open = false;
    if (server_side && c.res) c.res->close();
    Event e;
    e.kind = Event::Kind::kClose;
    e.conn = c.id;
    e.to_server = !server_side;
    schedule(now_ + sc_.net.delay_min_ms, std::move(e));
  }

  std::variant<wire::Message, Errc> decode(ByteView frame) const {
    try {
      auto r = wire::decode_msg(frame, sc_.protocol.suite);
      if (std::holds_alternative<wire::NeedMoreData>(r)) return Errc::kTruncated;
      return std::get<wire::Message>(std::move(r));
    } catch (const Error& e) {
      return e.code();
    }
  }

  void deliver(const Event& ev) {
    Conn* c = find_conn(ev.conn);
    if (!c) return;
    if (ev.to_server) {
      if (c->server_open) server_receive(*c, ev.frame);
    } else if (c->client_open) {
      if (c->client < 0) adversary_receive(*c);
      else client_receive(*clients_[static_cast<std::size_t>(c->client)], *c, ev.frame);
    }
  }

  void on_close(const Event& ev) {
    Conn* c = find_conn(ev.conn);
    if (!c) return;
    if (ev.to_server) {
      close_side(*c, true);
      return;
    }
    if (!c->client_open) return;
    c->client_open = false;
    if (c->client < 0) return;
    ClientSlot& slot = *clients_[static_cast<std::size_t>(c->client)];
    if (slot.state.conn != c->id) return;
    fail_step(slot, Outcome::kClosed, std::nullopt, false);
  }

  // ---- servers -----------------------------------------------------------------

  ServerReport& report_for(int server) {
    return server == 0 ? result_.home : result_.resources[static_cast<std::size_t>(server - 1)];
  }

  void reject(Conn& c, Errc code) {
    ++report_for(c.server).rejections[code];
    close_side(c, true);
  }

  std::size_t in_flight(int server, std::uint64_t except) const {
    std::size_t n = 0;
    for (const auto& [id, c] : conns_) {
      if (id == except || c->server != server || !c->server_open) continue;
      if (server == 0 && c->home &&
          (c->home->phase() == protocol::HomeHandshake::Phase::kAwaitM1 ||
           c->home->phase() == protocol::HomeHandshake::Phase::kSentM2)) {
        ++n;
      }
      if (server != 0 && c->res && !c->established) ++n;
    }
    return n;
  }

  void schedule_expiry(const Conn& c) {
    Event e;
    e.kind = Event::Kind::kServerExpire;
    e.conn = c.id;
    schedule(now_ + sc_.protocol.handshake_timeout_ms, std::move(e));
  }

  void server_receive(Conn& c, ByteView frame) {
    auto decoded = decode(frame);
    if (auto* err = std::get_if<Errc>(&decoded)) {
      reject(c, *err);
      return;
    }
    const wire::Message& msg = std::get<wire::Message>(decoded);
    if (c.server == 0) home_receive(c, msg);
    else resource_receive(c, msg);
  }

  void home_receive(Conn& c, const wire::Message& msg) {
    if (!c.home) {
      c.home = std::make_unique<protocol::HomeHandshake>(*home_->ctx, clock_);
      ++result_.home.handshakes;
      schedule_expiry(c);
    }
    protocol::Limits limits{in_flight(0, c.id), sc_.home_max_concurrent};
    protocol::ServerStep step = c.home->handle(msg, limits, home_->rng);
    if (step.resent) ++result_.home.resends;
    if (step.reply) {
      if (!step.resent) {
        if (const auto* m4 = std::get_if<wire::Credentials>(&*step.reply)) {
          const auto& rep = *c.home->issuance();
          cert::IdentityCertificate ic = cert::decode(m4->certificate);
          result_.issued.push_back({rep.username, ic.body.roles, rep.serial});
          genuine_certs_.push_back(m4->certificate);
        }
      }
      send(c, false, *step.reply);
    }
    if (step.failure) reject(c, *step.failure);
  }

  void resource_receive(Conn& c, const wire::Message& msg) {
    ResourceNode& node = *resources_[static_cast<std::size_t>(c.server - 1)];
    ServerReport& rep = report_for(c.server);
    if (c.established) {
      if (const auto* data = std::get_if<wire::AppData>(&msg)) {
        const protocol::SessionContext& session = *c.res->session();
        try {
          resource::AppRequest req = resource::open_request(session.session_key, *data);
          resource::AppResponse resp = resource::handle_request(session, node.rules, req);
          ++rep.requests;
          send(c, false, resource::seal_response(session.session_key, resp, node.rng));
        } catch (const Error& e) {
          reject(c, e.code());
        }
        return;
      }
    }
    if (!c.res) {
      c.res = std::make_unique<protocol::ResourceHandshake>(*node.ctx, clock_);
      ++rep.handshakes;
      schedule_expiry(c);
    }
    protocol::Limits limits{in_flight(c.server, c.id), sc_.resource_max_concurrent};
    protocol::ServerStep step = c.res->handle(msg, limits, node.rng);
    if (step.resent) ++rep.resends;
    if (step.reply) {
      if (!step.resent && std::holds_alternative<wire::SessionGrant>(*step.reply)) {
        c.established = true;
        const protocol::SessionContext& s = *c.res->session();
        result_.sessions.push_back(
            {c.server, c.id, s.peer_username, s.roles, s.session_key, s.nonce_digest});
      }
      send(c, false, *step.reply);
    }
    if (step.failure) reject(c, *step.failure);
  }

  void server_expire(std::uint64_t id) {
    Conn* c = find_conn(id);
    if (!c || !c->server_open) return;
    if (c->home) {
      if (c->home->expire_if_due()) reject(*c, Errc::kTimeout);
      else if (c->home->phase() == protocol::HomeHandshake::Phase::kDone) close_side(*c, true);
    } else if (c->res && !c->established) {
      if (c->res->expire_if_due()) reject(*c, Errc::kTimeout);
    }
  }

  // ---- clients -----------------------------------------------------------------

  void arm_timer(ClientSlot& slot, std::int64_t next_ms) {
    Event e;
    e.kind = Event::Kind::kClientTimer;
    e.client = index_of(slot);
    e.generation = ++slot.state.generation;
    schedule(std::max(now_, next_ms - sc_.start_unix_ms), std::move(e));
  }

  int index_of(const ClientSlot& slot) const {
    for (std::size_t i = 0; i < clients_.size(); ++i) {
      if (clients_[i].get() == &slot) return static_cast<int>(i);
    }
    return -1;
  }

  void start_client(int index) {
    ClientSlot& slot = *clients_[static_cast<std::size_t>(index)];
    ClientState& st = slot.state;
    st.stage = Stage::kEnroll;
    try {
      auto [machine, m1] = protocol::ClientEnrollment::start(
          slot.spec->user, slot.spec->password, home_->keys.pub, sc_.protocol, clock_);
      st.enroll.emplace(std::move(machine));
      Conn& c = open_conn(index, 0, st.name);
      st.conn = c.id;
      send(c, true, m1);
      arm_timer(slot, st.enroll->timer().next_ms());
    } catch (const Error& e) {
      fail_step(slot, Outcome::kFailed, e.code(), false);
    }
  }

  void start_access(ClientSlot& slot) {
    ClientState& st = slot.state;
    while (st.access_index < slot.spec->accesses.size()) {
      const AccessIntent& intent = slot.spec->accesses[st.access_index];
      st.stage = Stage::kAccess;
      try {
        auto [machine, r1] =
            protocol::ClientAccess::start(*st.certificate, st.keys, trust_, sc_.protocol, clock_);
        st.access.emplace(std::move(machine));
        Conn& c = open_conn(index_of(slot), intent.server, st.name);
        st.conn = c.id;
        send(c, true, r1);
        arm_timer(slot, st.access->timer().next_ms());
        return;
      } catch (const Error& e) {
        AccessOutcome& o = slot.report.accesses[st.access_index];
        o.outcome = Outcome::kFailed;
        o.error = e.code();
        ++st.access_index;
      }
    }
    st.stage = Stage::kDone;
  }

  // Ends the current step with `outcome` and moves on.
  void fail_step(ClientSlot& slot, Outcome outcome, std::optional<Errc> error, bool close_conn) {
    ClientState& st = slot.state;
    ++st.generation;
    if (close_conn) {
      if (Conn* c = find_conn(st.conn)) close_side(*c, false);
    }
    if (st.stage == Stage::kEnroll) {
      if (st.enroll) st.enroll->abandon();
      slot.report.enroll = outcome;
      slot.report.enroll_error = error;
      st.stage = Stage::kDone;
      return;
    }
    if (st.stage == Stage::kAccess || st.stage == Stage::kApp) {
      if (st.access) st.access->abandon();
      AccessOutcome& o = slot.report.accesses[st.access_index];
      o.outcome = outcome;
      o.error = error;
      st.pending_request.reset();
      ++st.access_index;
      start_access(slot);
    }
  }

  void client_timer(const Event& ev) {
    ClientSlot& slot = *clients_[static_cast<std::size_t>(ev.client)];
    ClientState& st = slot.state;
    if (ev.generation != st.generation) return;
    Conn* c = find_conn(st.conn);
    if (!c) return;
    if (st.stage == Stage::kApp) {
      switch (st.app_timer.poll(clock_.now_ms(), sc_.protocol)) {
        case protocol::RetryTimer::Due::kNothing: break;
        case protocol::RetryTimer::Due::kRetransmit: send(*c, true, *st.pending_request); break;
        case protocol::RetryTimer::Due::kGiveUp:
          fail_step(slot, Outcome::kGaveUp, Errc::kGiveUp, true);
          return;
      }
      arm_timer(slot, st.app_timer.next_ms());
      return;
    }
    protocol::TimerAction action;
    if (st.stage == Stage::kEnroll && st.enroll) action = st.enroll->on_timeout(clock_);
    else if (st.stage == Stage::kAccess && st.access) action = st.access->on_timeout(clock_);
    else return;
    if (std::holds_alternative<protocol::GiveUp>(action)) {
      fail_step(slot, Outcome::kGaveUp, Errc::kGiveUp, true);
      return;
    }
    if (const auto* r = std::get_if<protocol::Retransmit>(&action)) send(*c, true, r->message);
    const protocol::RetryTimer& t =
        st.stage == Stage::kEnroll ? st.enroll->timer() : st.access->timer();
    arm_timer(slot, t.next_ms());
  }

  void client_receive(ClientSlot& slot, Conn& c, ByteView frame) {
    ClientState& st = slot.state;
    if (c.id != st.conn || st.stage == Stage::kDone || st.stage == Stage::kWaiting) return;
    auto decoded = decode(frame);
    if (auto* err = std::get_if<Errc>(&decoded)) {
      fail_step(slot, Outcome::kFailed, *err, true);
      return;
    }
    const wire::Message& msg = std::get<wire::Message>(decoded);
    try {
      if (st.stage == Stage::kEnroll) {
        enroll_receive(slot, c, msg);
      } else if (st.stage == Stage::kAccess) {
        access_receive(slot, c, msg);
      } else if (st.stage == Stage::kApp) {
        app_receive(slot, c, msg);
      }
    } catch (const Error& e) {
      if (e.code() == Errc::kProtocolOrder) {
        ++slot.report.stale_ignored;
        return;
      }
      fail_step(slot, Outcome::kFailed, e.code(), true);
    }
  }

  void enroll_receive(ClientSlot& slot, Conn& c, const wire::Message& msg) {
    ClientState& st = slot.state;
    if (const auto* m2 = std::get_if<wire::ConnAccept>(&msg)) {
      wire::Enroll m3 = st.enroll->on_m2(*m2, st.rng, clock_);
      if (const crypto::SymKey* k = st.enroll->reply_key_for_testing()) {
        result_.secrets.symmetric_keys.push_back(k->key);
      }
      send(c, true, m3);
      arm_timer(slot, st.enroll->timer().next_ms());
    } else if (const auto* m4 = std::get_if<wire::Credentials>(&msg)) {
      protocol::EnrollmentResult r = st.enroll->on_m4(*m4, clock_);
      ++st.generation;
      result_.secrets.secret_keys.push_back(r.keys.sec.encode());
      slot.report.enroll = Outcome::kOk;
      slot.report.certificate = r.certificate;
      st.certificate = r.certificate_bytes;
      st.keys = r.keys;
      close_side(c, false);
      st.access_index = 0;
      start_access(slot);
    } else {
      throw Error(Errc::kProtocolOrder, "unexpected message during enrollment");
    }
  }

  void access_receive(ClientSlot& slot, Conn& c, const wire::Message& msg) {
    ClientState& st = slot.state;
    if (const auto* r2 = std::get_if<wire::Challenge>(&msg)) {
      wire::AuthResponse r3 = st.access->on_r2(*r2, clock_);
      send(c, true, r3);
      arm_timer(slot, st.access->timer().next_ms());
    } else if (const auto* r4 = std::get_if<wire::SessionGrant>(&msg)) {
      protocol::SessionContext ctx = st.access->on_r4(*r4, clock_);
      AccessOutcome& o = slot.report.accesses[st.access_index];
      o.session_key = ctx.session_key;
      o.server_identity = ctx.peer_username;
      result_.secrets.symmetric_keys.push_back(ctx.session_key.key);
      const AccessIntent& intent = slot.spec->accesses[st.access_index];
      st.pending_request = resource::seal_request(
          ctx.session_key, {intent.resource, to_bytes(intent.body)}, st.rng);
      st.stage = Stage::kApp;
      send(c, true, *st.pending_request);
      st.app_timer.arm(clock_.now_ms(), sc_.protocol);
      arm_timer(slot, st.app_timer.next_ms());
    } else {
      throw Error(Errc::kProtocolOrder, "unexpected message during access");
    }
  }

  void app_receive(ClientSlot& slot, Conn& c, const wire::Message& msg) {
    ClientState& st = slot.state;
    const auto* data = std::get_if<wire::AppData>(&msg);
    if (!data) throw Error(Errc::kProtocolOrder, "unexpected message in session");
    AccessOutcome& o = slot.report.accesses[st.access_index];
    resource::AppResponse resp = resource::open_response(o.session_key, *data);
    o.status = resp.status;
    o.response = resp.body;
    o.outcome = resp.status == resource::Status::kOk ? Outcome::kOk : Outcome::kDenied;
    if (!resp.body.empty()) result_.secrets.bodies.push_back(resp.body);
    ++st.generation;
    st.pending_request.reset();
    close_side(c, false);
    ++st.access_index;
    start_access(slot);
  }

  void finish_pending() {
    for (auto& slot : clients_) {
      ClientState& st = slot->state;
      if (st.stage == Stage::kEnroll) {
        slot->report.enroll = Outcome::kTimedOut;
        slot->report.enroll_error = Errc::kTimeout;
      } else if (st.stage == Stage::kAccess || st.stage == Stage::kApp) {
        AccessOutcome& o = slot->report.accesses[st.access_index];
        o.outcome = Outcome::kTimedOut;
        o.error = Errc::kTimeout;
      }
      if (st.enroll) st.enroll->abandon();
      if (st.access) st.access->abandon();
    }
  }

  // ---- adversary -----------------------------------------------------------------

  void replay(const Event& ev) {
    if (ev.index >= recordings_.size()) {
      result_.notes.push_back(fmt::format("replay {} skipped: only {} recorded", ev.index,
                                          recordings_.size()));
      return;
    }
    const Recording rec = recordings_[ev.index];
    Conn* orig = find_conn(rec.conn);
    if (ev.mode == ReplayMode::kNewConnection && rec.from_client) {
      const Bytes* opener = nullptr;
      for (const auto& e : result_.transcript.entries) {
        if (e.connection == rec.conn && e.from_client) {
          opener = &e.frame;
          break;
        }
      }
      Conn& c = open_conn(-1, orig->server, "adversary");
      if (opener && *opener != rec.frame) c.adversary_followup = rec.frame;
      transmit(c, true, opener ? *opener : rec.frame, false);
      return;
    }
    bool open = rec.from_client ? orig->server_open : orig->client_open;
    if (!open) {
      result_.notes.push_back(fmt::format("replay {} skipped: connection {} closed", ev.index, rec.conn));
      return;
    }
    transmit(*orig, rec.from_client, rec.frame, false);
  }

  void adversary_receive(Conn& c) {
    if (!c.adversary_followup) return;
    Bytes f = std::move(*c.adversary_followup);
    c.adversary_followup.reset();
    transmit(c, true, std::move(f), false);
  }

  std::optional<Bytes> forge(const Bytes& original, ForgeKind kind) {
    cert::IdentityCertificate ic;
    try {
      ic = cert::decode(original);
    } catch (const Error&) {
      return std::nullopt;
    }
    switch (kind) {
      case ForgeKind::kRogueIssuer: {
        const crypto::KeyPair& rogue = bank_keypair(sc_.key_bits, kRogueKeyIndex);
        std::int64_t validity = std::max<std::int64_t>(1, ic.body.not_after - clock_.now_seconds());
        return cert::encode(cert::issue(rogue.sec, ic.body.issuer_id, ic.body.subject,
                                        ic.body.roles, ic.body.subject_public_key, validity, clock_,
                                        adversary_rng_));
      }
      case ForgeKind::kAlteredRoles: {
        std::vector<cert::Role> roles = ic.body.roles;
        roles.emplace_back("root");
        ic.body.roles = cert::canonical_roles(roles);
        return cert::encode(ic);
      }
      case ForgeKind::kAlteredSubject:
        ic.body.subject.username = "mallory";
        return cert::encode(ic);
      case ForgeKind::kOtherParty:
        for (const auto& g : genuine_certs_) {
          if (g != original) return g;
        }
        return std::nullopt;
    }
    return std::nullopt;
  }

  std::optional<Bytes> substitute(const Bytes& frame, ForgeKind kind) {
    auto decoded = decode(frame);
    auto* msg = std::get_if<wire::Message>(&decoded);
    if (!msg) return std::nullopt;
    Bytes* slot = nullptr;
    if (auto* m4 = std::get_if<wire::Credentials>(msg)) slot = &m4->certificate;
    if (auto* r2 = std::get_if<wire::Challenge>(msg)) slot = &r2->server_certificate;
    if (auto* r3 = std::get_if<wire::AuthResponse>(msg)) slot = &r3->certificate;
    if (!slot) {
      result_.notes.push_back("substitute-cert: frame carries no certificate");
      return std::nullopt;
    }
    auto forged = forge(*slot, kind);
    if (!forged) {
      result_.notes.push_back("substitute-cert: no replacement certificate available");
      return std::nullopt;
    }
    *slot = std::move(*forged);
    return wire::encode_msg(*msg, sc_.protocol.suite);
  }

  const Scenario& sc_;
  ManualClock clock_;
  Rng master_;
  Rng net_rng_;
  Rng adversary_rng_;
  RunResult result_;
  std::int64_t now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t next_conn_ = 1;
  std::priority_queue<Event, std::vector<Event>, EventLater> queue_;
  std::map<std::uint64_t, std::unique_ptr<Conn>> conns_;
  std::unique_ptr<HomeNode> home_;
  std::vector<std::unique_ptr<ResourceNode>> resources_;
  std::vector<std::unique_ptr<ClientSlot>> clients_;
  cert::TrustStore trust_;
  std::vector<Recording> recordings_;
  std::map<wire::MsgType, std::size_t> type_counts_;
  std::size_t total_sent_ = 0;
  std::vector<Bytes> genuine_certs_;
};

}  // namespace

RunResult run_scenario(const Scenario& scenario, std::uint64_t seed) {
  scenario.validate();
  return Simulator(scenario, seed).run();
}

// ---- predicates ---------------------------------------------------------------------

std::string_view to_string(Predicate p) {
  switch (p) {
    case Predicate::kNoPlaintextPassword: return "no-plaintext-password";
    case Predicate::kNoPlaintextSessionKey: return "no-plaintext-session-key";
    case Predicate::kNoPlaintextSecretKey: return "no-plaintext-secret-key";
    case Predicate::kNoPlaintextBodies: return "no-plaintext-resource-bodies";
    case Predicate::kSingleSessionPerNonce: return "single-session-per-nonce";
    case Predicate::kMessageCountBounds: return "message-count-bounds";
  }
  return "unknown";
}

std::vector<Predicate> all_predicates() {
  return {Predicate::kNoPlaintextPassword, Predicate::kNoPlaintextSessionKey,
          Predicate::kNoPlaintextSecretKey, Predicate::kNoPlaintextBodies,
          Predicate::kSingleSessionPerNonce, Predicate::kMessageCountBounds};
}

namespace {

// First frame index containing `needle`, if any.
std::optional<std::size_t> find_in_frames(const Transcript& t, ByteView needle,
                                          bool app_data_only) {
  if (needle.empty()) return std::nullopt;
  for (std::size_t i = 0; i < t.entries.size(); ++i) {
    if (app_data_only && t.entries[i].type() != wire::MsgType::kAppData) continue;
    if (contains(t.entries[i].frame, needle)) return i;
  }
  return std::nullopt;
}

PredicateResult check_absent(Predicate p, const Transcript& t, const std::vector<Bytes>& needles,
                             bool app_data_only) {
  PredicateResult r{p, true, ""};
  for (std::size_t k = 0; k < needles.size(); ++k) {
    if (auto at = find_in_frames(t, needles[k], app_data_only)) {
      r.pass = false;
      r.detail = fmt::format("secret #{} visible in frame {} ({})", k, *at,
                             t.entries[*at].type() ? wire::short_name(*t.entries[*at].type()) : "?");
      break;
    }
  }
  return r;
}

}  // namespace

std::vector<PredicateResult> assert_transcript(const RunResult& run,
                                               const std::vector<Predicate>& predicates,
                                               const protocol::ProtocolConfig& protocol) {
  std::vector<PredicateResult> out;
  const Transcript& t = run.transcript;
  for (Predicate p : predicates) {
    switch (p) {
      case Predicate::kNoPlaintextPassword: {
        std::vector<Bytes> pw;
        for (const auto& s : run.secrets.passwords) pw.push_back(to_bytes(s));
        out.push_back(check_absent(p, t, pw, false));
        break;
      }
      case Predicate::kNoPlaintextSessionKey:
        out.push_back(check_absent(p, t, run.secrets.symmetric_keys, false));
        break;
      case Predicate::kNoPlaintextSecretKey:
        out.push_back(check_absent(p, t, run.secrets.secret_keys, false));
        break;
      case Predicate::kNoPlaintextBodies:
        out.push_back(check_absent(p, t, run.secrets.bodies, true));
        break;
      case Predicate::kSingleSessionPerNonce: {
        PredicateResult r{p, true, ""};
        std::set<std::pair<int, Bytes>> seen;
        for (const auto& s : run.sessions) {
          Bytes d(s.nonce_digest.view().begin(), s.nonce_digest.view().end());
          if (!seen.insert({s.server, d}).second) {
            r.pass = false;
            r.detail = fmt::format("two sessions on {} share nonce {}", server_name(s.server),
                                   to_hex(d).substr(0, 16));
          }
        }
        out.push_back(r);
        break;
      }
      case Predicate::kMessageCountBounds: {
        PredicateResult r{p, true, ""};
        const std::size_t max_sends = static_cast<std::size_t>(protocol.max_retries) + 1;
        std::map<std::pair<std::uint64_t, wire::MsgType>, std::size_t> client_sends;
        std::map<std::uint64_t, std::size_t> server_sends, client_arrivals;
        for (const auto& e : t.entries) {
          auto type = e.type();
          if (!type) continue;
          bool original = e.fate != Fate::kDuplicated && e.fate != Fate::kInjected;
          if (e.from_client) {
            if (original) ++client_sends[{e.connection, *type}];
            if (e.fate != Fate::kDropped) ++client_arrivals[e.connection];
          } else if (original) {
            ++server_sends[e.connection];
          }
        }
        for (const auto& [key, n] : client_sends) {
          if (n > max_sends) {
            r.pass = false;
            r.detail = fmt::format("conn {} sent {} x{} (bound {})", key.first,
                                   wire::short_name(key.second), n, max_sends);
          }
        }
        for (const auto& [conn, n] : server_sends) {
          if (n > client_arrivals[conn]) {
            r.pass = false;
            r.detail = fmt::format("conn {}: server sent {} frames for {} received", conn, n,
                                   client_arrivals[conn]);
          }
        }
        out.push_back(r);
        break;
      }
    }
  }
  return out;
}

std::string format_report(const std::vector<PredicateResult>& results) {
  std::string out;
  for (const auto& r : results) {
    if (r.pass) out += fmt::format("PASS {}\n", to_string(r.predicate));
    else out += fmt::format("FAIL {}: {}\n", to_string(r.predicate), r.detail);
  }
  return out;
}

// ---- mutation offsets ----------------------------------------------------------------

namespace {

// True if `b` is exactly a sequence of complete TLV fields.
bool is_tlv(ByteView b) {
  std::size_t pos = 0;
  if (b.empty()) return false;
  while (pos < b.size()) {
    if (b.size() - pos < 6) return false;
    std::uint32_t len = get_u32(b.subspan(pos + 2, 4));
    if (len > b.size() - pos - 6) return false;
    pos += 6 + len;
  }
  return true;
}

void walk_tlv(ByteView b, std::size_t base, std::size_t samples, Rng& rng,
              std::set<std::size_t>& out) {
  std::size_t pos = 0;
  while (pos < b.size()) {
    std::uint32_t len = get_u32(b.subspan(pos + 2, 4));
    for (std::size_t i = 0; i < 6; ++i) out.insert(base + pos + i);
    std::size_t value = pos + 6;
    if (len > 0) {
      out.insert(base + value);
      out.insert(base + value + len - 1);
      if (len > 2) {
        for (std::size_t s = 0; s < samples; ++s) {
          out.insert(base + value + 1 + rng.uniform(len - 2));
        }
      }
      ByteView inner = b.subspan(value, len);
      if (is_tlv(inner)) walk_tlv(inner, base + value, samples, rng, out);
    }
    pos = value + len;
  }
}

}  // namespace

std::vector<std::size_t> mutation_offsets(ByteView frame, std::size_t samples_per_field, Rng& rng) {
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < std::min(frame.size(), wire::kHeaderSize); ++i) out.insert(i);
  if (frame.size() > wire::kHeaderSize) {
    ByteView payload = frame.subspan(wire::kHeaderSize);
    if (is_tlv(payload)) walk_tlv(payload, wire::kHeaderSize, samples_per_field, rng, out);
  }
  return {out.begin(), out.end()};
}

}  // namespace sso::sim
