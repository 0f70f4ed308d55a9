#include <gtest/gtest.h>

#include <functional>
#include <thread>

#include <fmt/format.h>

#include "sso/resource_server.hpp"
#include "support/loopback.hpp"
#include "support/temp_dir.hpp"

using namespace sso;
using namespace sso::resource;
using sso::testing::LoopbackWorld;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::kParameter;
}

protocol::SessionContext session_with(std::vector<cert::Role> roles) {
  protocol::SessionContext s;
  s.peer_username = "u";
  s.roles = std::move(roles);
  return s;
}

Bytes text(std::string_view s) { return Bytes(s.begin(), s.end()); }

}  // namespace

TEST(RuleSet, ParsesCommentsAndSpaces) {
  RuleSet r = RuleSet::parse("# rules\n payroll = admin # money\n\nwiki=staff\r\n");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r.required_for("payroll")->name(), "admin");
  EXPECT_EQ(r.required_for("wiki")->name(), "staff");
  EXPECT_EQ(r.required_for("nothing"), nullptr);
}

TEST(RuleSet, ErrorsNameTheLine) {
  auto line_of = [](std::string_view t) {
    try {
      RuleSet::parse(t);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::kConfig);
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(line_of("a=b\nnoequals\n").find("line 2"), std::string::npos);
  EXPECT_NE(line_of("a=b\n\na=c\n").find("line 3"), std::string::npos);
  EXPECT_NE(line_of("a=Bad Role\n").find("line 1"), std::string::npos);
  EXPECT_NE(line_of("=admin\n").find("line 1"), std::string::npos);
}

TEST(AppMessages, RoundTrip) {
  AppRequest req{"wiki", text("hello")};
  EXPECT_EQ(AppRequest::decode(req.encode()), req);
  AppResponse resp{Status::kInsufficientRole, {}};
  EXPECT_EQ(AppResponse::decode(resp.encode()), resp);
}

TEST(HandleRequest, Examples) {
  RuleSet rules = sso::testing::demo_rules();
  auto admin = session_with({cert::Role("admin"), cert::Role("staff")});
  auto staff = session_with({cert::Role("staff")});
  auto none = session_with({});

  AppResponse ok = handle_request(admin, rules, {"payroll", text("q1")});
  EXPECT_EQ(ok.status, Status::kOk);
  EXPECT_EQ(ok.body, text("payroll:q1"));
  EXPECT_EQ(handle_request(staff, rules, {"payroll", {}}).status, Status::kInsufficientRole);
  EXPECT_EQ(handle_request(staff, rules, {"wiki", {}}).status, Status::kOk);
  EXPECT_EQ(handle_request(none, rules, {"wiki", {}}).status, Status::kInsufficientRole);
  EXPECT_EQ(handle_request(admin, rules, {"printer", {}}).status, Status::kUnknownResource);
  EXPECT_TRUE(handle_request(staff, rules, {"payroll", text("x")}).body.empty());
}

// Random rule sets, role sets and requests against a linear-scan oracle.
TEST(HandleRequest, MatchesBruteForceOracle) {
  const std::vector<std::string> role_names = {"admin", "staff", "audit", "ops", "guest"};
  const std::vector<std::string> resource_names = {"payroll", "wiki", "logs", "db", "mail", "hr"};
  Rng rng = Rng::from_seed(77);
  int checked = 0;
  for (int world = 0; world < 100; ++world) {
    std::vector<std::pair<std::string, std::string>> table;
    RuleSet rules;
    for (const auto& res : resource_names) {
      if (rng.bernoulli(0.7)) {
        std::string role = role_names[rng.uniform(role_names.size())];
        table.emplace_back(res, role);
        rules.add({res, cert::Role(role)});
      }
    }
    for (int i = 0; i < 100; ++i) {
      std::vector<cert::Role> held;
      std::vector<std::string> held_names;
      for (const auto& r : role_names) {
        if (rng.bernoulli(0.4)) {
          held.emplace_back(r);
          held_names.push_back(r);
        }
      }
      std::string res = resource_names[rng.uniform(resource_names.size())];
      if (rng.bernoulli(0.1)) res = "unlisted";

      Status expected = Status::kUnknownResource;
      for (const auto& [name, role] : table) {
        if (name != res) continue;
        expected = Status::kInsufficientRole;
        for (const auto& h : held_names) {
          if (h == role) expected = Status::kOk;
        }
      }
      AppResponse got = handle_request(session_with(held), rules, {res, text("b")});
      ASSERT_EQ(got.status, expected) << "resource " << res << " world " << world;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 10'000);
}

TEST(AppEnvelope, TamperIsRejected) {
  Rng rng = Rng::from_seed(5);
  crypto::SymKey key = crypto::gen_sym_key(crypto::SymAlgorithm::kModernAead, rng);
  crypto::SymKey other = crypto::gen_sym_key(crypto::SymAlgorithm::kModernAead, rng);
  wire::AppData d = seal_request(key, {"wiki", text("x")}, rng);
  EXPECT_EQ(open_request(key, d).resource, "wiki");
  EXPECT_EQ(code_of([&] { open_request(other, d); }), Errc::kAuthentication);
  for (std::size_t i = 0; i < d.ciphertext.size(); i += 7) {
    wire::AppData t = d;
    t.ciphertext[i] ^= 0x01;
    EXPECT_EQ(code_of([&] { open_request(key, t); }), Errc::kAuthentication) << i;
  }
}

TEST(SessionTable, AddFindRemove) {
  SessionTable t;
  Rng rng = Rng::from_seed(6);
  auto s = session_with({cert::Role("staff")});
  s.session_key = crypto::gen_sym_key(crypto::SymAlgorithm::kModernAead, rng);
  t.add(1, s);
  EXPECT_EQ(t.size(), 1u);
  ASSERT_TRUE(t.find(1));
  EXPECT_EQ(t.find(1)->session_key, s.session_key);
  t.remove(1);
  EXPECT_FALSE(t.find(1));
  EXPECT_EQ(t.size(), 0u);
}

TEST(ResourceConfig, Errors) {
  auto bad = [](std::string t) {
    return code_of([&] { ResourceServerConfig::from_kv(io::KeyValueConfig::parse(t)); });
  };
  EXPECT_EQ(bad("idle_timeout_ms = 0\n"), Errc::kConfig);
  EXPECT_EQ(bad("suite = none\n"), Errc::kConfig);
  EXPECT_EQ(bad("colour = blue\n"), Errc::kConfig);
}

TEST(ResourceConfig, MakeChecksFiles) {
  sso::testing::TempDir tmp;
  ResourceServerConfig cfg;
  cfg.server_key = tmp / "missing.key";
  EXPECT_EQ(code_of([&] { make_resource_server(cfg, nullptr); }), Errc::kConfig);

  const crypto::KeyPair& a = sso::testing::test_keypair(1024, 60);
  const crypto::KeyPair& b = sso::testing::test_keypair(1024, 61);
  SystemClock clock;
  Rng rng = Rng::from_seed(1);
  auto c = cert::issue(a.sec, "home", {"res", "", "", ""}, {}, b.pub, 60, clock, rng);
  save_key_file(tmp / "res.key", a.sec);
  save_certificate_file(tmp / "res.cert", cert::encode(c));
  save_anchor_file(tmp / "home.anchor", {"home", a.pub});
  io::write_file(tmp / "rules.txt", "wiki=staff\n");
  cfg.server_key = tmp / "res.key";
  cfg.server_cert = tmp / "res.cert";
  cfg.anchor = tmp / "home.anchor";
  cfg.rules = tmp / "rules.txt";
  // Certificate is for key b, server key is a.
  EXPECT_EQ(code_of([&] { make_resource_server(cfg, nullptr); }), Errc::kConfig);
  save_key_file(tmp / "res.key", b.sec);
  EXPECT_NO_THROW(make_resource_server(cfg, nullptr));
}

// ---- daemon over loopback ------------------------------------------------------------

TEST(ResourceDaemon, SignOnceAccessTwo) {
  LoopbackWorld w;
  auto& payroll = w.add_resource(70, sso::testing::demo_rules());
  auto& wiki = w.add_resource(71, sso::testing::demo_rules());
  client::CachedCredentials creds = w.signon("alice", "correct horse");

  for (auto [srv, name] : {std::pair{&payroll, "resource-70"}, std::pair{&wiki, "resource-71"}}) {
    client::Session s = client::open_session({"127.0.0.1", srv->port()}, creds, w.trust,
                                             w.options(), Rng::from_seed(srv->port()), w.clock);
    EXPECT_EQ(s.context().peer_username, name);
    AppResponse r = s.request({"payroll", text("report")});
    EXPECT_EQ(r.status, Status::kOk);
    EXPECT_EQ(r.body, text("payroll:report"));
  }
  w.home->stop();
  EXPECT_EQ(w.home->counters().completed, 1u);
}

TEST(ResourceDaemon, RoleEnforcedOverTheWire) {
  LoopbackWorld w;
  auto& srv = w.add_resource(72, sso::testing::demo_rules());
  client::CachedCredentials bob = w.signon("bob", "battery staple");
  client::Session s = client::open_session({"127.0.0.1", srv.port()}, bob, w.trust, w.options(),
                                           Rng::from_seed(1), w.clock);
  EXPECT_EQ(s.request({"payroll", {}}).status, Status::kInsufficientRole);
  EXPECT_EQ(s.request({"wiki", text("p")}).status, Status::kOk);
  EXPECT_EQ(s.request({"unknown", {}}).status, Status::kUnknownResource);
  s.close();
  srv.stop();
  ResourceCounters c = srv.counters();
  EXPECT_EQ(c.requests, 3u);
  EXPECT_EQ(c.granted, 1u);
  EXPECT_EQ(c.denied, 2u);
}

TEST(ResourceDaemon, FreshKeyPerConnection) {
  LoopbackWorld w;
  auto& srv = w.add_resource(73, sso::testing::demo_rules());
  client::CachedCredentials creds = w.signon("alice", "correct horse");
  crypto::SymKey first, second;
  {
    client::Session s = client::open_session({"127.0.0.1", srv.port()}, creds, w.trust,
                                             w.options(), Rng::from_seed(2), w.clock);
    first = s.context().session_key;
  }
  {
    client::Session s = client::open_session({"127.0.0.1", srv.port()}, creds, w.trust,
                                             w.options(), Rng::from_seed(2), w.clock);
    second = s.context().session_key;
  }
  EXPECT_FALSE(first.key.empty());
  EXPECT_NE(first, second);
}

TEST(ResourceDaemon, TamperedDataClosesConnection) {
  LoopbackWorld w;
  auto& srv = w.add_resource(74, sso::testing::demo_rules());
  client::CachedCredentials creds = w.signon("alice", "correct horse");

  // Drive the handshake by hand so the application frame can be corrupted.
  auto [st, r1] = protocol::ClientAccess::start(creds.certificate, creds.keys, w.trust,
                                                w.options().protocol, w.clock);
  net::Socket sock = net::Socket::connect("127.0.0.1", srv.port(), 2000);
  sock.set_read_timeout_ms(5000);
  wire::FrameStream fs(sock);
  fs.write(wire::to_frame(r1));
  auto read_msg = [&] {
    auto f = fs.read();
    if (!f) throw Error(Errc::kNetwork, "closed");
    return wire::decode_payload(f->type, f->payload);
  };
  wire::Message r2 = read_msg();
  fs.write(wire::to_frame(st.on_r2(std::get<wire::Challenge>(r2), w.clock)));
  wire::Message r4 = read_msg();
  protocol::SessionContext ctx = st.on_r4(std::get<wire::SessionGrant>(r4), w.clock);

  Rng rng = Rng::from_seed(9);
  wire::AppData good = seal_request(ctx.session_key, {"wiki", text("a")}, rng);
  fs.write(wire::to_frame(good));
  EXPECT_EQ(open_response(ctx.session_key, std::get<wire::AppData>(read_msg())).status,
            Status::kOk);

  wire::AppData bad = seal_request(ctx.session_key, {"wiki", text("b")}, rng);
  bad.ciphertext[bad.ciphertext.size() / 2] ^= 0x80;
  fs.write(wire::to_frame(bad));
  EXPECT_FALSE(fs.read());
  srv.stop();
  ResourceCounters c = srv.counters();
  EXPECT_EQ(c.requests, 1u);
  EXPECT_EQ(c.failed["authentication-failure"], 1u);
  EXPECT_EQ(srv.sessions().size(), 0u);
}

TEST(ResourceDaemon, UntrustedIssuerIsRefused) {
  LoopbackWorld w;
  auto& srv = w.add_resource(75, sso::testing::demo_rules());
  // Credentials from a different home server.
  const crypto::KeyPair& rogue = sso::testing::test_keypair(1024, 76);
  const crypto::KeyPair& user = sso::testing::test_keypair(1024, 77);
  Rng rng = Rng::from_seed(3);
  auto c = cert::issue(rogue.sec, "home", {"alice", "", "", ""}, {cert::Role("admin")}, user.pub,
                       3600, w.clock, rng);
  client::CachedCredentials creds =
      client::decode_cache(client::encode_cache(cert::encode(c), user.sec));
  EXPECT_EQ(code_of([&] {
              client::open_session({"127.0.0.1", srv.port()}, creds, w.trust, w.options(),
                                   Rng::from_seed(4), w.clock);
            }),
            Errc::kAuthentication);
  srv.stop();
  EXPECT_EQ(srv.counters().established, 0u);
  EXPECT_EQ(srv.counters().failed["cert-invalid"], 1u);
}

TEST(ResourceDaemon, ExpiredCredentialsAskForReenrollment) {
  LoopbackWorld w;
  auto& srv = w.add_resource(78, sso::testing::demo_rules());
  client::CachedCredentials creds = w.signon("alice", "correct horse");
  OffsetClock later(w.clock, 2LL * 24 * 3600 * 1000);
  EXPECT_EQ(code_of([&] {
              client::open_session({"127.0.0.1", srv.port()}, creds, w.trust, w.options(),
                                   Rng::from_seed(5), later);
            }),
            Errc::kReenrollNeeded);
}

TEST(ResourceDaemon, RefusesBeyondMaxConcurrent) {
  LoopbackWorld w;
  auto& srv = w.add_resource(79, sso::testing::demo_rules(), 1);
  client::CachedCredentials creds = w.signon("alice", "correct horse");
  net::Socket holder = net::Socket::connect("127.0.0.1", srv.port(), 2000);
  auto [st, r1] = protocol::ClientAccess::start(creds.certificate, creds.keys, w.trust,
                                                w.options().protocol, w.clock);
  wire::FrameStream fs(holder);
  fs.write(wire::to_frame(r1));
  holder.set_read_timeout_ms(5000);
  ASSERT_TRUE(fs.read());
  EXPECT_EQ(code_of([&] {
              client::open_session({"127.0.0.1", srv.port()}, creds, w.trust, w.options(),
                                   Rng::from_seed(6), w.clock);
            }),
            Errc::kAuthentication);
  holder.close();
}
