#include <fmt/format.h>

#include <gtest/gtest.h>

#include <sys/stat.h>

#include <chrono>
#include <functional>
#include <set>
#include <thread>

#include "sso/home_server.hpp"
#include "support/loopback.hpp"
#include "support/temp_dir.hpp"
#include "support/test_keys.hpp"

using namespace sso;
using namespace sso::home;
using sso::testing::TempDir;

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

}  // namespace

TEST(UserRecord, PasswordVerifies) {
  Rng rng = Rng::from_seed(1);
  UserRecord r = make_user_record("alice", "pw", {cert::Role("staff")}, {}, rng);
  EXPECT_TRUE(verify_password(r, "pw"));
  EXPECT_FALSE(verify_password(r, "pW"));
  EXPECT_FALSE(verify_password(r, ""));
  EXPECT_EQ(r.subject.username, "alice");
}

TEST(UserRecord, SameWordDifferentSalt) {
  Rng rng = Rng::from_seed(2);
  UserRecord a = make_user_record("a", "same", {}, {}, rng);
  UserRecord b = make_user_record("b", "same", {}, {}, rng);
  EXPECT_NE(a.salt, b.salt);
  EXPECT_NE(a.verifier, b.verifier);
}

TEST(UserRecord, LineHoldsNoPlaintext) {
  Rng rng = Rng::from_seed(3);
  UserRecord r = make_user_record("carol", "hunter2-secret", {}, {}, rng);
  std::string line = encode_record_line(r);
  Bytes raw = base64_decode(line);
  std::string raw_text(raw.begin(), raw.end());
  EXPECT_EQ(raw_text.find("hunter2-secret"), std::string::npos);
  EXPECT_EQ(decode_record_line(line), r);
}

TEST(UserRecord, EmptyUsernameRejected) {
  Rng rng = Rng::from_seed(4);
  EXPECT_EQ(code_of([&] { make_user_record("", "pw", {}, {}, rng); }), Errc::kParameter);
}

TEST(UserDirectory, RoundTripHundredRecords) {
  Rng rng = Rng::from_seed(5);
  UserDirectory dir;
  for (int i = 0; i < 100; ++i) {
    std::vector<cert::Role> roles;
    if (i % 2 == 0) roles.emplace_back("even");
    if (i % 3 == 0) roles.emplace_back("triple");
    dir.add_user(fmt::format("user{:03}", i), fmt::format("pw-{}", i), roles,
                 {"", fmt::format("room {}", i), "org", fmt::format("u{}@example.org", i)}, rng);
  }
  TempDir tmp;
  dir.save(tmp / "users.db");
  struct stat st {};
  ASSERT_EQ(stat((tmp / "users.db").c_str(), &st), 0);
  EXPECT_EQ(st.st_mode & 0777, 0600);

  auto loaded = UserDirectory::load(tmp / "users.db");
  ASSERT_EQ(loaded->size(), 100u);
  EXPECT_EQ(loaded->records(), dir.records());
  for (int i = 0; i < 100; ++i) {
    std::string name = fmt::format("user{:03}", i);
    EXPECT_TRUE(loaded->check_password(name, fmt::format("pw-{}", i)));
    EXPECT_FALSE(loaded->check_password(name, fmt::format("pw-{}", i + 1)));
  }
}

TEST(UserDirectory, DuplicateAddRejected) {
  Rng rng = Rng::from_seed(6);
  UserDirectory dir;
  dir.add_user("alice", "a", {}, {}, rng);
  EXPECT_EQ(code_of([&] { dir.add_user("alice", "b", {}, {}, rng); }), Errc::kDuplicateUsername);
  EXPECT_TRUE(dir.check_password("alice", "a"));
}

TEST(UserDirectory, DuplicateLineNamesLineAndUser) {
  Rng rng = Rng::from_seed(7);
  std::string line = encode_record_line(make_user_record("dup", "x", {}, {}, rng));
  std::string text = "# users\n" + line + "\n\n" + line + "\n";
  try {
    UserDirectory::parse(text);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kDuplicateUsername);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("dup"), std::string::npos);
  }
}

TEST(UserDirectory, CorruptLineNamesLine) {
  try {
    UserDirectory::parse("\n!!!notbase64\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kMalformed);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(UserDirectory, EmptyFileIsEmptyDirectory) {
  EXPECT_EQ(UserDirectory::parse("")->size(), 0u);
  EXPECT_EQ(UserDirectory::parse("# nothing\n\n")->size(), 0u);
}

TEST(UserDirectory, LookupMissesAreQuiet) {
  UserDirectory dir;
  EXPECT_FALSE(dir.find_user("nobody"));
  EXPECT_FALSE(dir.check_password("nobody", ""));
}

TEST(KeyPool, ServesFromPoolThenInline) {
  KeyPool pool(1024, 8, Rng::from_seed(8));
  while (pool.refill_once()) {
  }
  ASSERT_EQ(pool.size(), 8u);
  Rng rng = Rng::from_seed(9);
  for (int i = 0; i < 8; ++i) {
    protocol::KeyTake t = pool.take(rng);
    EXPECT_TRUE(t.from_pool);
    EXPECT_EQ(t.keygen_us, 0);
  }
  protocol::KeyTake t = pool.take(rng);
  EXPECT_FALSE(t.from_pool);
  EXPECT_GT(t.keygen_us, 0);
  EXPECT_EQ(t.keys.pub.bits(), 1024);
  EXPECT_EQ(pool.served_from_pool(), 8u);
  EXPECT_EQ(pool.generated_inline(), 1u);
}

TEST(KeyPool, BackgroundRefills) {
  KeyPool pool(1024, 3, Rng::from_seed(10));
  pool.start_background();
  EXPECT_TRUE(pool.wait_until_full(std::chrono::seconds(30)));
  Rng rng = Rng::from_seed(11);
  pool.take(rng);
  EXPECT_TRUE(pool.wait_until_full(std::chrono::seconds(30)));
  pool.stop_background();
  EXPECT_EQ(pool.size(), 3u);
}

TEST(KeyPool, PooledKeysAreDistinct) {
  KeyPool pool(1024, 4, Rng::from_seed(12));
  while (pool.refill_once()) {
  }
  Rng rng = Rng::from_seed(13);
  std::set<Bytes> seen;
  for (int i = 0; i < 4; ++i) seen.insert(pool.take(rng).keys.pub.encoded());
  EXPECT_EQ(seen.size(), 4u);
}

TEST(KeyPool, RejectsBadSize) {
  EXPECT_EQ(code_of([] { KeyPool(512, 1, Rng::from_seed(1)); }), Errc::kParameter);
}

TEST(HomeConfig, ParsesAndResolvesPaths) {
  TempDir tmp;
  io::write_file(tmp / "home.conf",
                 "port = 7001\nmax_concurrent = 4\nkey_bits = 1024\nsuite = legacy-3des\n"
                 "keypool_size = 16\nuser_db = users.db\nserver_key = keys/home.key\n");
  HomeServerConfig c = HomeServerConfig::load(tmp / "home.conf");
  EXPECT_EQ(c.port, 7001);
  EXPECT_EQ(c.max_concurrent, 4u);
  EXPECT_EQ(c.key_bits, 1024);
  EXPECT_EQ(c.suite, wire::Suite::kLegacy3Des);
  EXPECT_EQ(c.keypool_size, 16u);
  EXPECT_EQ(c.user_db, tmp / "users.db");
  EXPECT_EQ(c.server_key, tmp / "keys/home.key");
}

TEST(HomeConfig, Errors) {
  auto bad = [](std::string text) {
    return code_of([&] { HomeServerConfig::from_kv(io::KeyValueConfig::parse(text)); });
  };
  EXPECT_EQ(bad("port = 70000\n"), Errc::kConfig);
  EXPECT_EQ(bad("key_bits = 4096\n"), Errc::kConfig);
  EXPECT_EQ(bad("suite = rot13\n"), Errc::kConfig);
  EXPECT_EQ(bad("max_concurrent = 0\n"), Errc::kConfig);
  EXPECT_EQ(bad("prot = 1\n"), Errc::kConfig);
  EXPECT_EQ(bad("port = 1\nport = 2\n"), Errc::kConfig);
  EXPECT_EQ(bad("port\n"), Errc::kConfig);
}

TEST(LatencyHistogram, Buckets) {
  LatencyHistogram h;
  h.record_us(500);        // <= 1 ms
  h.record_us(1000);       // <= 1 ms
  h.record_us(1001);       // <= 2 ms
  h.record_us(60'000'000); // overflow
  auto b = h.buckets();
  EXPECT_EQ(b[0], 2u);
  EXPECT_EQ(b[1], 1u);
  EXPECT_EQ(b.back(), 1u);
  EXPECT_EQ(h.count(), 4u);
}

// ---- daemon over loopback ----------------------------------------------------------

TEST(HomeDaemon, EnrollsAndLogsWithoutPassword) {
  sso::testing::LoopbackWorld w;
  client::CachedCredentials creds = w.signon("alice", "correct horse");
  EXPECT_EQ(creds.decoded.body.subject.username, "alice");
  EXPECT_EQ(creds.decoded.body.roles, (std::vector<cert::Role>{cert::Role("admin"),
                                                               cert::Role("staff")}));
  EXPECT_EQ(creds.decoded.body.issuer_id, "home");
  EXPECT_NO_THROW(cert::validate(creds.certificate, w.trust, w.clock));

  w.home->stop();
  HomeCounters c = w.home->counters();
  EXPECT_EQ(c.completed, 1u);
  EXPECT_EQ(c.issued_inline, 1u);
  std::string log = w.home_log_text.str();
  EXPECT_NE(log.find("event=enroll"), std::string::npos);
  EXPECT_NE(log.find("outcome=ok"), std::string::npos);
  EXPECT_EQ(log.find("correct horse"), std::string::npos);
  EXPECT_EQ(log.find("correct"), std::string::npos);
}

TEST(HomeDaemon, WrongPasswordAndUnknownUserLookAlike) {
  sso::testing::LoopbackWorld w;
  Errc wrong = code_of([&] { w.signon("alice", "nope"); });
  Errc unknown = code_of([&] { w.signon("mallory", "nope"); });
  EXPECT_EQ(wrong, Errc::kAuthentication);
  EXPECT_EQ(unknown, Errc::kAuthentication);
  w.home->stop();
  HomeCounters c = w.home->counters();
  EXPECT_EQ(c.completed, 0u);
  EXPECT_EQ(c.issued_inline, 0u);
  EXPECT_EQ(c.failed["bad-password"] + c.failed["unknown-user"], 2u);
}

TEST(HomeDaemon, KeyPoolPathIsUsed) {
  auto cfg = sso::testing::LoopbackWorld::default_home_config();
  cfg.keypool_size = 2;
  sso::testing::LoopbackWorld w(cfg);
  ASSERT_TRUE(w.home->key_pool()->wait_until_full(std::chrono::seconds(30)));
  w.signon("alice", "correct horse");
  w.signon("bob", "battery staple");
  w.home->stop();
  HomeCounters c = w.home->counters();
  EXPECT_EQ(c.completed, 2u);
  EXPECT_EQ(c.issued_from_pool, 2u);
  EXPECT_EQ(c.keygen_us_total, 0);
}

TEST(HomeDaemon, RefusesBeyondMaxConcurrent) {
  auto cfg = sso::testing::LoopbackWorld::default_home_config();
  cfg.max_concurrent = 1;
  sso::testing::LoopbackWorld w(cfg);
  // Hold one handshake open without finishing it.
  net::Socket holder = net::Socket::connect("127.0.0.1", w.home->port(), 2000);
  wire::FrameStream hs(holder);
  hs.write(wire::to_frame(wire::ConnRequest{"alice"}));
  holder.set_read_timeout_ms(5000);
  ASSERT_TRUE(hs.read());  // M2: the first handshake is admitted

  EXPECT_EQ(code_of([&] { w.signon("bob", "battery staple"); }), Errc::kAuthentication);
  holder.close();
  // Capacity frees once the held handshake ends.
  for (int i = 0; i < 50 && w.home->counters().started < 2; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  EXPECT_NO_THROW(w.signon("bob", "battery staple"));
  w.home->stop();
  EXPECT_GE(w.home->counters().refused, 1u);
}

TEST(HomeDaemon, IdleStopIsPrompt) {
  sso::testing::LoopbackWorld w;
  auto t0 = std::chrono::steady_clock::now();
  w.home->stop();
  auto elapsed = std::chrono::steady_clock::now() - t0;
  EXPECT_LT(elapsed, std::chrono::seconds(1));
}

TEST(HomeDaemon, BindConflictIsNetworkError) {
  sso::testing::LoopbackWorld w;
  HomeServerConfig cfg = sso::testing::LoopbackWorld::default_home_config();
  cfg.port = w.home->port();
  HomeServer other(cfg, w.users, w.home_keys);
  EXPECT_EQ(code_of([&] { other.start(); }), Errc::kNetwork);
}

TEST(HomeDaemon, GarbageIsDropped) {
  sso::testing::LoopbackWorld w;
  net::Socket s = net::Socket::connect("127.0.0.1", w.home->port(), 2000);
  std::string junk = "GET / HTTP/1.0\r\n\r\n";
  s.write_all(ByteView(reinterpret_cast<const std::uint8_t*>(junk.data()), junk.size()));
  s.set_read_timeout_ms(5000);
  std::uint8_t buf[16];
  EXPECT_EQ(s.read_some(buf), 0u);
  EXPECT_NO_THROW(w.signon("alice", "correct horse"));
}
