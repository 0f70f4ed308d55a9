#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "sso/harness.hpp"

namespace sso::sim {
namespace {

Errc code_of(const std::function<void()>& fn, std::string* what = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (what) *what = e.what();
    return e.code();
  }
  ADD_FAILURE() << "expected an sso::Error";
  return Errc::kIo;
}

bool all_pass(const RunResult& r, const Scenario& sc) {
  auto results = assert_transcript(r, all_predicates(), sc.protocol);
  bool ok = true;
  for (const auto& p : results) ok = ok && p.pass;
  if (!ok) ADD_FAILURE() << format_report(results);
  return ok;
}

Scenario enroll_only() {
  Scenario sc = happy_path_scenario();
  sc.clients[0].accesses.clear();
  return sc;
}

TEST(ScenarioParse, FullExample) {
  Scenario sc = Scenario::parse(R"(# two servers
loss 0.1
duplicate 0.05
delay 2 9
reorder 4
suite legacy-3des
retries 2
resources 2
rule wiki staff
rule payroll admin
user alice pw-alice admin,staff
user bob pw-bob -
client alice pw-alice start=20 access=1:wiki:hello access=2:payroll:x
client bob wrong
record M3
replay 0 at 900 new
tamper R2#1 40 0x80
substitute-cert R3 altered-roles
drop APP#2
seed 17
)");
  EXPECT_DOUBLE_EQ(sc.net.loss, 0.1);
  EXPECT_EQ(sc.net.delay_max_ms, 9);
  EXPECT_EQ(sc.net.reorder_ms, 4);
  EXPECT_EQ(sc.protocol.suite, wire::Suite::kLegacy3Des);
  EXPECT_EQ(sc.protocol.max_retries, 2);
  ASSERT_EQ(sc.users.size(), 2u);
  EXPECT_EQ(sc.users[0].roles.size(), 2u);
  EXPECT_TRUE(sc.users[1].roles.empty());
  ASSERT_EQ(sc.clients.size(), 2u);
  EXPECT_EQ(sc.clients[0].start_ms, 20);
  ASSERT_EQ(sc.clients[0].accesses.size(), 2u);
  EXPECT_EQ(sc.clients[0].accesses[1].server, 2);
  EXPECT_EQ(sc.clients[0].accesses[1].resource, "payroll");
  ASSERT_EQ(sc.adversary.actions.size(), 5u);
  const auto& replay = std::get<Replay>(sc.adversary.actions[1]);
  EXPECT_EQ(replay.mode, ReplayMode::kNewConnection);
  EXPECT_EQ(replay.at_ms, 900);
  const auto& tamper = std::get<Tamper>(sc.adversary.actions[2]);
  EXPECT_EQ(tamper.pattern.to_string(), "R2#1");
  EXPECT_EQ(tamper.mask, 0x80);
  EXPECT_EQ(std::get<SubstituteCert>(sc.adversary.actions[3]).kind, ForgeKind::kAlteredRoles);
  EXPECT_EQ(sc.seed, 17u);
}

TEST(ScenarioParse, ErrorsNameTheLine) {
  std::string what;
  EXPECT_EQ(code_of([] { Scenario::parse("loss 0.1\nwobble 3\n"); }, &what), Errc::kConfig);
  EXPECT_NE(what.find("line 2"), std::string::npos) << what;
  EXPECT_EQ(code_of([] { Scenario::parse("\n\nloss 1.5\n"); }, &what), Errc::kConfig);
  EXPECT_NE(what.find("line 3"), std::string::npos) << what;
  EXPECT_EQ(code_of([] { Scenario::parse("tamper M9 3\n"); }, &what), Errc::kConfig);
  EXPECT_NE(what.find("line 1"), std::string::npos) << what;
  EXPECT_EQ(code_of([] { Scenario::parse("delay 5 2\n"); }), Errc::kConfig);
  EXPECT_EQ(code_of([] { Scenario::parse("replay 0 at 10\n"); }), Errc::kConfig);
  EXPECT_EQ(code_of([] { Scenario::parse("client a b access=3:wiki:x\n"); }), Errc::kConfig);
  EXPECT_EQ(code_of([] { Scenario::parse("client a b access=wiki\n"); }), Errc::kConfig);
  EXPECT_EQ(code_of([] { Scenario::parse("user a b Bad!Role\n"); }), Errc::kConfig);
}

TEST(MsgPattern, ParseAndPrint) {
  EXPECT_EQ(MsgPattern::parse("M3").type, wire::MsgType::kEnroll);
  EXPECT_EQ(MsgPattern::parse("R2#3").occurrence, 3);
  EXPECT_FALSE(MsgPattern::parse("*").type.has_value());
  EXPECT_EQ(MsgPattern::parse("APP#2").to_string(), "APP#2");
  EXPECT_EQ(code_of([] { MsgPattern::parse("M3#0"); }), Errc::kParameter);
  EXPECT_EQ(code_of([] { MsgPattern::parse("M3#x"); }), Errc::kParameter);
  EXPECT_EQ(code_of([] { MsgPattern::parse("Q1"); }), Errc::kParameter);
}

TEST(HappyPath, EightHandshakeFramesAndMatchingKeys) {
  Scenario sc = happy_path_scenario();
  RunResult r = run_scenario(sc, 1);
  EXPECT_EQ(r.transcript.protocol_frames_delivered(), 8u);
  EXPECT_EQ(r.transcript.count(wire::MsgType::kAppData), 2u);
  for (auto t : {wire::MsgType::kConnRequest, wire::MsgType::kConnAccept, wire::MsgType::kEnroll,
                 wire::MsgType::kCredentials, wire::MsgType::kAccessRequest,
                 wire::MsgType::kChallenge, wire::MsgType::kAuthResponse,
                 wire::MsgType::kSessionGrant}) {
    EXPECT_EQ(r.transcript.count(t), 1u) << wire::short_name(t);
  }
  ASSERT_EQ(r.clients.size(), 1u);
  const ClientReport& c = r.clients[0];
  EXPECT_EQ(c.enroll, Outcome::kOk);
  ASSERT_TRUE(c.certificate);
  EXPECT_EQ(c.certificate->body.subject.username, "alice");
  ASSERT_EQ(c.accesses.size(), 1u);
  EXPECT_EQ(c.accesses[0].outcome, Outcome::kOk);
  EXPECT_EQ(sso::to_string(c.accesses[0].response), "wiki:quarterly-report-body");
  EXPECT_EQ(c.accesses[0].server_identity, "res1");
  ASSERT_EQ(r.sessions.size(), 1u);
  EXPECT_EQ(r.sessions[0].peer_username, "alice");
  EXPECT_EQ(r.sessions[0].session_key, c.accesses[0].session_key);
  EXPECT_FALSE(c.accesses[0].session_key.key.empty());
  ASSERT_EQ(r.issued.size(), 1u);
  EXPECT_EQ(r.issued[0].username, "alice");
  EXPECT_FALSE(r.hit_max_time);
  EXPECT_TRUE(all_pass(r, sc));
}

TEST(HappyPath, DeniedResourceIsReportedNotFailed) {
  Scenario sc = happy_path_scenario();
  sc.clients[0].accesses = {{1, "payroll", "q3-salaries"}};
  RunResult r = run_scenario(sc, 2);
  EXPECT_EQ(r.clients[0].accesses[0].outcome, Outcome::kDenied);
  EXPECT_EQ(r.clients[0].accesses[0].status, resource::Status::kInsufficientRole);
  EXPECT_EQ(r.resources[0].requests, 1u);
}

TEST(HappyPath, LegacySuite) {
  Scenario sc = happy_path_scenario();
  sc.protocol.suite = wire::Suite::kLegacy3Des;
  RunResult r = run_scenario(sc, 3);
  EXPECT_EQ(r.clients[0].accesses[0].outcome, Outcome::kOk);
  EXPECT_EQ(r.clients[0].accesses[0].session_key.key.size(), 24u);
  for (const auto& e : r.transcript.entries) EXPECT_EQ(e.frame[2], 0x02);
}

TEST(Determinism, SameSeedSameTranscript) {
  Scenario sc = happy_path_scenario();
  sc.net = {0.2, 0.1, 1, 20, 10};
  RunResult a = run_scenario(sc, 99);
  RunResult b = run_scenario(sc, 99);
  EXPECT_EQ(a.transcript.serialize(), b.transcript.serialize());
  EXPECT_EQ(a.transcript, b.transcript);
  RunResult c = run_scenario(sc, 100);
  EXPECT_NE(a.transcript.serialize(), c.transcript.serialize());
}

// Each round trip fails only if all 1 + retries attempts lose the request
// or the reply.
double enrollment_success_oracle(double loss, int retries) {
  double attempt_fail = 1.0 - (1.0 - loss) * (1.0 - loss);
  double trip = 1.0 - std::pow(attempt_fail, retries + 1);
  return trip * trip;
}

TEST(Loss, EnrollmentSuccessMatchesOracle) {
  Scenario sc = enroll_only();
  sc.net.loss = 0.1;
  const int runs = 200;
  int ok = 0;
  for (int seed = 0; seed < runs; ++seed) {
    RunResult r = run_scenario(sc, static_cast<std::uint64_t>(seed));
    Outcome o = r.clients[0].enroll;
    EXPECT_TRUE(o == Outcome::kOk || o == Outcome::kGaveUp || o == Outcome::kClosed)
        << to_string(o);
    if (o == Outcome::kOk) ++ok;
    EXPECT_LE(r.issued.size(), 1u);
    EXPECT_TRUE(all_pass(r, sc)) << "seed " << seed;
  }
  double expected = enrollment_success_oracle(0.1, sc.protocol.max_retries);
  EXPECT_NEAR(expected, 0.99740, 1e-4);
  EXPECT_NEAR(static_cast<double>(ok) / runs, expected, 0.05);
}

TEST(Loss, HeavyLossGivesUpOnSchedule) {
  Scenario sc = enroll_only();
  sc.adversary.actions.push_back(Drop{MsgPattern::parse("M2")});
  auto t0 = std::chrono::steady_clock::now();
  RunResult r = run_scenario(sc, 5);
  auto wall = std::chrono::steady_clock::now() - t0;
  EXPECT_EQ(r.clients[0].enroll, Outcome::kGaveUp);
  EXPECT_EQ(r.transcript.count(wire::MsgType::kConnRequest), 4u);
  EXPECT_EQ(r.home.rejections[Errc::kTimeout], 0u);
  EXPECT_GE(r.end_ms, 7500);
  EXPECT_LT(std::chrono::duration_cast<std::chrono::milliseconds>(wall).count(), 1000);
}

TEST(Loss, ServerDiscardsAbandonedHandshakeAfterTimeout) {
  Scenario sc = enroll_only();
  sc.protocol.max_retries = 5;
  sc.adversary.actions.push_back(Drop{MsgPattern::parse("M3")});
  auto t0 = std::chrono::steady_clock::now();
  RunResult r = run_scenario(sc, 6);
  auto wall = std::chrono::steady_clock::now() - t0;
  EXPECT_EQ(r.clients[0].enroll, Outcome::kClosed);
  EXPECT_EQ(r.home.rejections[Errc::kTimeout], 1u);
  EXPECT_GE(r.end_ms, 10'000);
  EXPECT_LT(std::chrono::duration_cast<std::chrono::milliseconds>(wall).count(), 1000);
}

TEST(Duplicates, ExtraCopiesAreAbsorbed) {
  Scenario sc = happy_path_scenario();
  sc.net.duplicate = 1.0;
  sc.net.reorder_ms = 3;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RunResult r = run_scenario(sc, seed);
    EXPECT_EQ(r.clients[0].accesses[0].outcome, Outcome::kOk) << seed;
    EXPECT_EQ(r.issued.size(), 1u);
    EXPECT_EQ(r.sessions.size(), 1u);
    EXPECT_TRUE(all_pass(r, sc));
  }
}

TEST(Replay, RecordedEnrollAndAuthNeverYieldSecondIssueOrSession) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Scenario sc = happy_path_scenario();
    Rng pick = Rng::from_seed(seed);
    sc.adversary.actions.push_back(Record{MsgPattern::parse("M3")});
    sc.adversary.actions.push_back(Record{MsgPattern::parse("R3")});
    for (int k = 0; k < 3; ++k) {
      Replay rp;
      rp.index = pick.uniform(2);
      rp.at_ms = static_cast<std::int64_t>(pick.uniform(12'000));
      rp.mode = pick.bernoulli(0.5) ? ReplayMode::kNewConnection : ReplayMode::kSameConnection;
      sc.adversary.actions.push_back(rp);
    }
    RunResult r = run_scenario(sc, seed);
    EXPECT_EQ(r.issued.size(), 1u) << seed;
    EXPECT_EQ(r.sessions.size(), 1u) << seed;
    EXPECT_EQ(r.clients[0].accesses[0].outcome, Outcome::kOk) << seed;
    EXPECT_TRUE(all_pass(r, sc));
  }
}

TEST(Replay, NewConnectionReplayIsRejectedByFreshness) {
  Scenario sc = happy_path_scenario();
  sc.adversary.actions.push_back(Record{MsgPattern::parse("M3")});
  sc.adversary.actions.push_back(Record{MsgPattern::parse("R3")});
  sc.adversary.actions.push_back(Replay{0, 200, ReplayMode::kNewConnection});
  sc.adversary.actions.push_back(Replay{1, 300, ReplayMode::kNewConnection});
  RunResult r = run_scenario(sc, 8);
  EXPECT_EQ(r.issued.size(), 1u);
  EXPECT_EQ(r.sessions.size(), 1u);
  EXPECT_EQ(r.home.rejections[Errc::kFreshnessMismatch], 1u);
  EXPECT_EQ(r.resources[0].rejections[Errc::kBadChallengeSignature], 1u);
  EXPECT_EQ(r.transcript.count(wire::MsgType::kConnRequest), 2u);
}

TEST(Replay, MissingRecordingIsNoted) {
  Scenario sc = enroll_only();
  sc.adversary.actions.push_back(Record{MsgPattern::parse("R3")});
  sc.adversary.actions.push_back(Replay{0, 100, ReplayMode::kSameConnection});
  RunResult r = run_scenario(sc, 1);
  ASSERT_EQ(r.notes.size(), 1u);
  EXPECT_NE(r.notes[0].find("replay 0"), std::string::npos);
}

TEST(Tamper, SingleBitFlipsNeverGrantAlteredIdentity) {
  Scenario base = happy_path_scenario();
  RunResult clean = run_scenario(base, 11);
  Rng rng = Rng::from_seed(11);
  std::size_t runs = 0;
  for (const auto& e : clean.transcript.entries) {
    auto type = e.type();
    ASSERT_TRUE(type);
    auto offsets = mutation_offsets(e.frame, 1, rng);
    for (std::size_t i = 0; i < offsets.size(); i += 5) {
      Scenario sc = base;
      sc.adversary.actions.push_back(Tamper{MsgPattern::parse(std::string(wire::short_name(*type))),
                                            offsets[i], 0x01});
      RunResult r = run_scenario(sc, 11);
      ++runs;
      for (const auto& s : r.sessions) {
        EXPECT_EQ(s.peer_username, "alice");
        EXPECT_EQ(cert::join_roles(s.roles), "staff");
      }
      EXPECT_LE(r.sessions.size(), 1u);
      const auto& a = r.clients[0].accesses[0];
      if (a.outcome == Outcome::kOk) EXPECT_EQ(a.server_identity, "res1");
    }
  }
  EXPECT_GT(runs, 50u);
}

TEST(Tamper, FlippedM1UsernameIsRefused) {
  Scenario sc = enroll_only();
  sc.adversary.actions.push_back(Tamper{MsgPattern::parse("M1"), 14, 0x01});
  RunResult r = run_scenario(sc, 4);
  EXPECT_EQ(r.issued.size(), 0u);
  EXPECT_NE(r.clients[0].enroll, Outcome::kOk);
  EXPECT_EQ(r.transcript.entries[0].fate, Fate::kTampered);
}

TEST(SubstituteCert, EveryForgeryIsRejected) {
  struct Case {
    const char* pattern;
    ForgeKind kind;
  };
  for (Case c : {Case{"R3", ForgeKind::kRogueIssuer}, Case{"R3", ForgeKind::kAlteredRoles},
                 Case{"R3", ForgeKind::kAlteredSubject}, Case{"R3", ForgeKind::kOtherParty},
                 Case{"R2", ForgeKind::kRogueIssuer}, Case{"R2", ForgeKind::kAlteredSubject},
                 Case{"R2", ForgeKind::kOtherParty}, Case{"M4", ForgeKind::kAlteredRoles},
                 Case{"M4", ForgeKind::kOtherParty}}) {
    Scenario sc = happy_path_scenario();
    sc.adversary.actions.push_back(SubstituteCert{MsgPattern::parse(c.pattern), c.kind});
    RunResult r = run_scenario(sc, 21);
    EXPECT_TRUE(r.notes.empty()) << c.pattern << " " << r.notes.front();
    // A forged server certificate still lets the genuine client authenticate
    // to the genuine server; the client refuses the grant it cannot verify.
    if (std::string(c.pattern) != "R2") {
      EXPECT_TRUE(r.sessions.empty()) << c.pattern << " " << static_cast<int>(c.kind);
    }
    for (const auto& s : r.sessions) EXPECT_EQ(s.peer_username, "alice");
    bool client_ok = r.clients[0].enroll == Outcome::kOk &&
                     r.clients[0].accesses[0].outcome == Outcome::kOk;
    EXPECT_FALSE(client_ok) << c.pattern;
  }
}

TEST(SubstituteCert, AlteredRolesInR3IsCertInvalid) {
  Scenario sc = happy_path_scenario();
  sc.adversary.actions.push_back(SubstituteCert{MsgPattern::parse("R3"), ForgeKind::kAlteredRoles});
  RunResult r = run_scenario(sc, 22);
  EXPECT_EQ(r.resources[0].rejections[Errc::kCertInvalid], 1u);
  EXPECT_EQ(r.clients[0].accesses[0].outcome, Outcome::kClosed);
}

TEST(SubstituteCert, RogueServerCertIsUntrustedByClient) {
  Scenario sc = happy_path_scenario();
  sc.adversary.actions.push_back(SubstituteCert{MsgPattern::parse("R2"), ForgeKind::kRogueIssuer});
  RunResult r = run_scenario(sc, 23);
  EXPECT_EQ(r.clients[0].accesses[0].outcome, Outcome::kFailed);
  EXPECT_EQ(r.clients[0].accesses[0].error, Errc::kServerUntrusted);
}

TEST(Capacity, HomeRefusesBeyondLimit) {
  Scenario sc = enroll_only();
  sc.users.push_back({"bob", "bob-password", {}});
  sc.clients.push_back({"bob", "bob-password", 0, {}});
  sc.home_max_concurrent = 1;
  RunResult r = run_scenario(sc, 3);
  EXPECT_EQ(r.clients[0].enroll, Outcome::kOk);
  EXPECT_EQ(r.clients[1].enroll, Outcome::kClosed);
  EXPECT_EQ(r.home.rejections[Errc::kAtCapacity], 1u);
}

TEST(Capacity, WrongPasswordIsClosedWithoutCredentials) {
  Scenario sc = happy_path_scenario();
  sc.clients[0].password = "not the password";
  RunResult r = run_scenario(sc, 3);
  EXPECT_EQ(r.clients[0].enroll, Outcome::kClosed);
  EXPECT_EQ(r.clients[0].accesses[0].outcome, Outcome::kNotRun);
  EXPECT_EQ(r.home.rejections[Errc::kBadPassword], 1u);
  EXPECT_TRUE(r.issued.empty());
  EXPECT_TRUE(all_pass(r, sc));
}

TEST(Validity, ShortCertificateNeedsReenrollment) {
  Scenario sc = happy_path_scenario();
  sc.cert_validity_seconds = 1;
  sc.clients[0].accesses = {{1, "wiki", "first"}, {1, "wiki", "second"}};
  for (const char* p : {"R1#2", "R1#3", "R1#4"}) {
    sc.adversary.actions.push_back(Drop{MsgPattern::parse(p)});
  }
  RunResult r = run_scenario(sc, 3);
  EXPECT_EQ(r.clients[0].accesses[0].outcome, Outcome::kOk);
  // The second access starts inside the validity window and only gets R1
  // through after it has closed; the client checks expiry when starting, the
  // server when R3 arrives.
  EXPECT_EQ(r.clients[0].accesses[1].outcome, Outcome::kClosed);
  EXPECT_EQ(r.resources[0].rejections[Errc::kCertInvalid], 1u);
  EXPECT_EQ(r.sessions.size(), 1u);
}

TEST(Predicates, DetectPlantedLeaks) {
  Scenario sc = happy_path_scenario();
  RunResult r = run_scenario(sc, 1);
  RunResult leaky = r;
  Bytes pw = to_bytes("correct horse battery");
  leaky.transcript.entries[0].frame.insert(leaky.transcript.entries[0].frame.end(), pw.begin(),
                                           pw.end());
  leaky.secrets.bodies.push_back(to_bytes("quarterly"));
  leaky.transcript.entries.back().frame = to_bytes("xxquarterlyxx");
  wire::Frame f{wire::Suite::kModern, wire::MsgType::kAppData, to_bytes("quarterly")};
  leaky.transcript.entries.back().frame = wire::encode_frame(f);
  leaky.sessions.push_back(leaky.sessions[0]);
  auto results = assert_transcript(leaky, all_predicates(), sc.protocol);
  std::map<Predicate, bool> pass;
  for (const auto& p : results) pass[p.predicate] = p.pass;
  EXPECT_FALSE(pass[Predicate::kNoPlaintextPassword]);
  EXPECT_TRUE(pass[Predicate::kNoPlaintextSessionKey]);
  EXPECT_FALSE(pass[Predicate::kNoPlaintextBodies]);
  EXPECT_FALSE(pass[Predicate::kSingleSessionPerNonce]);
  std::string report = format_report(results);
  EXPECT_NE(report.find("FAIL no-plaintext-password"), std::string::npos) << report;
  EXPECT_NE(report.find("PASS no-plaintext-session-key"), std::string::npos) << report;
}

TEST(Predicates, MessageCountBoundFlagsExtraSends) {
  Scenario sc = happy_path_scenario();
  RunResult r = run_scenario(sc, 1);
  for (int i = 0; i < 5; ++i) r.transcript.entries.push_back(r.transcript.entries[0]);
  auto results = assert_transcript(r, {Predicate::kMessageCountBounds}, sc.protocol);
  EXPECT_FALSE(results[0].pass);
  EXPECT_NE(results[0].detail.find("M1"), std::string::npos) << results[0].detail;
}

TEST(MutationOffsets, CoverHeaderAndStayInBounds) {
  RunResult r = run_scenario(happy_path_scenario(), 1);
  Rng rng = Rng::from_seed(1);
  for (const auto& e : r.transcript.entries) {
    auto offs = mutation_offsets(e.frame, 2, rng);
    ASSERT_GE(offs.size(), wire::kHeaderSize);
    for (std::size_t i = 0; i < wire::kHeaderSize; ++i) EXPECT_EQ(offs[i], i);
    EXPECT_TRUE(std::is_sorted(offs.begin(), offs.end()));
    EXPECT_LT(offs.back(), e.frame.size());
    // First payload field tag and last payload byte are included.
    EXPECT_TRUE(std::binary_search(offs.begin(), offs.end(), wire::kHeaderSize));
    EXPECT_TRUE(std::binary_search(offs.begin(), offs.end(), e.frame.size() - 1));
  }
}

TEST(BankKeys, StableAcrossCalls) {
  const crypto::KeyPair& a = bank_keypair(1024, 7);
  const crypto::KeyPair& b = bank_keypair(1024, 7);
  EXPECT_EQ(&a, &b);
  EXPECT_NE(bank_keypair(1024, 8).pub.encoded(), a.pub.encoded());
}

}  // namespace
}  // namespace sso::sim
