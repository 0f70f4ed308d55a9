#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <set>

#include "sso/certificate.hpp"
#include "sso/error.hpp"
#include "support/test_keys.hpp"

namespace sso::cert {
namespace {

using sso::testing::test_keypair;

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an sso::Error";
  return Errc::kIo;
}

class CertificateTest : public ::testing::Test {
 protected:
  const crypto::KeyPair& issuer = test_keypair(1024, 100);
  const crypto::KeyPair& subject = test_keypair(1024, 101);
  ManualClock clock{1'700'000'000'000};
  Rng rng = Rng::from_seed(77);

  SubjectInfo alice() { return {"alice", "Targu Mures", "UPM", "alice@example.org"}; }

  IdentityCertificate make(std::vector<Role> roles = {Role("staff"), Role("admin")},
                           std::int64_t validity = kDefaultValiditySeconds) {
    return issue(issuer.sec, "home", alice(), std::move(roles), subject.pub, validity, clock, rng);
  }

  TrustStore store() {
    TrustStore t;
    t.add("home", issuer.pub);
    return t;
  }
};

TEST_F(CertificateTest, IssueThenValidateAccepts) {
  IdentityCertificate c = make();
  VerifiedIdentity v = validate(c, store(), clock);
  EXPECT_EQ(v.subject, alice());
  EXPECT_EQ(v.roles, (std::vector<Role>{Role("admin"), Role("staff")}));
  EXPECT_EQ(v.subject_public_key, subject.pub);
}

TEST_F(CertificateTest, ValidityWindowArithmetic) {
  IdentityCertificate c = make({}, 86400);
  EXPECT_EQ(c.body.not_after - c.body.not_before, 86400);
  EXPECT_EQ(c.body.not_before, clock.now_seconds());
}

TEST_F(CertificateTest, DistinctSerials) {
  EXPECT_NE(make().body.serial, make().body.serial);
}

TEST_F(CertificateTest, RejectsBadIssueParameters) {
  EXPECT_EQ(code_of([&] { make({}, 0); }), Errc::kParameter);
  EXPECT_EQ(code_of([&] {
              issue(issuer.sec, "home", SubjectInfo{}, {}, subject.pub, 10, clock, rng);
            }),
            Errc::kParameter);
  EXPECT_EQ(code_of([&] {
              SubjectInfo s = alice();
              s.email = std::string(256, 'x');
              issue(issuer.sec, "home", s, {}, subject.pub, 10, clock, rng);
            }),
            Errc::kParameter);
  EXPECT_THROW(Role("Admin"), Error);
  EXPECT_THROW(Role(""), Error);
  EXPECT_THROW(Role(std::string(65, 'a')), Error);
  EXPECT_NO_THROW(Role(std::string(64, 'a')));
}

TEST_F(CertificateTest, EncodingIsDeterministic) {
  IdentityCertificate c = make();
  EXPECT_EQ(encode(c), encode(c));
  EXPECT_EQ(encode_tbs(c.body), encode_tbs(c.body));
}

TEST_F(CertificateTest, RoleOrderDoesNotChangeTbs) {
  IdentityCertificate c = make();
  CertificateBody a = c.body, b = c.body;
  a.roles = {Role("x"), Role("b"), Role("m")};
  b.roles = {Role("m"), Role("x"), Role("b"), Role("b")};
  EXPECT_EQ(encode_tbs(a), encode_tbs(b));
}

TEST_F(CertificateTest, EmptyRolesStillDecodes) {
  IdentityCertificate c = make({});
  IdentityCertificate d = decode(encode(c));
  EXPECT_TRUE(d.body.roles.empty());
  EXPECT_EQ(d, c);
  EXPECT_NO_THROW(validate(d, store(), clock));
}

TEST_F(CertificateTest, EncodeDecodeRoundTripProperty) {
  Rng gen = Rng::from_seed(5);
  auto random_string = [&](std::size_t max_len) {
    std::string s(gen.uniform(max_len + 1), ' ');
    for (char& ch : s) ch = static_cast<char>(gen.uniform(256));
    return s;
  };
  for (int i = 0; i < 200; ++i) {
    SubjectInfo s{random_string(255), random_string(255), random_string(30), random_string(255)};
    if (s.username.empty()) s.username = "u";
    std::vector<Role> roles;
    for (std::uint64_t r = gen.uniform(6); r > 0; --r) {
      std::string name(1 + gen.uniform(64), 'a');
      for (char& ch : name) ch = "abcxyz019_-"[gen.uniform(11)];
      roles.emplace_back(name);
    }
    IdentityCertificate c = issue(issuer.sec, "issuer-" + std::to_string(i), s, roles, subject.pub,
                                  1 + static_cast<std::int64_t>(gen.uniform(1'000'000)), clock, gen);
    Bytes enc = encode(c);
    IdentityCertificate d = decode(enc);
    ASSERT_EQ(d, c);
    ASSERT_EQ(encode(d), enc);
  }
}

TEST_F(CertificateTest, TruncatedBufferIsMalformed) {
  Bytes enc = encode(make());
  for (std::size_t len = 0; len < enc.size(); len += 13) {
    EXPECT_EQ(code_of([&] { decode(ByteView(enc).first(len)); }), Errc::kMalformed) << len;
  }
  EXPECT_EQ(code_of([&] { decode(ByteView(enc).first(enc.size() - 1)); }), Errc::kMalformed);
}

TEST_F(CertificateTest, TrailingGarbageIsMalformed) {
  Bytes enc = encode(make());
  enc.push_back(0);
  EXPECT_EQ(code_of([&] { decode(enc); }), Errc::kMalformed);
}

TEST_F(CertificateTest, UnknownTagIsMalformed) {
  Bytes enc = encode(make());
  enc[1] = 0x7F;  // serial tag
  EXPECT_EQ(code_of([&] { decode(enc); }), Errc::kMalformed);
}

// Each conjunct of acceptance, broken in isolation.
TEST_F(CertificateTest, UnknownIssuerGatesAcceptance) {
  IdentityCertificate c = make();
  TrustStore other;
  other.add("elsewhere", issuer.pub);
  EXPECT_EQ(code_of([&] { validate(c, other, clock); }), Errc::kUnknownIssuer);
  EXPECT_EQ(code_of([&] { validate(c, TrustStore{}, clock); }), Errc::kUnknownIssuer);
}

TEST_F(CertificateTest, WrongIssuerKeyGatesAcceptance) {
  IdentityCertificate c = make();
  TrustStore t;
  t.add("home", test_keypair(1024, 102).pub);
  EXPECT_EQ(code_of([&] { validate(c, t, clock); }), Errc::kBadSignature);
}

TEST_F(CertificateTest, FlippedEmailByteIsBadSignature) {
  Bytes enc = encode(make());
  std::string email = alice().email;
  auto it = std::search(enc.begin(), enc.end(), email.begin(), email.end());
  ASSERT_NE(it, enc.end());
  *it ^= 0x01;
  EXPECT_EQ(code_of([&] { validate(ByteView(enc), store(), clock); }), Errc::kBadSignature);
}

TEST_F(CertificateTest, ModifiedRolesFailValidation) {
  IdentityCertificate c = make({Role("guest")});
  c.body.roles = {Role("admin"), Role("guest")};
  EXPECT_EQ(code_of([&] { validate(c, store(), clock); }), Errc::kBadSignature);
  c.body.roles = {};
  EXPECT_EQ(code_of([&] { validate(c, store(), clock); }), Errc::kBadSignature);
}

TEST_F(CertificateTest, ExpiryGatesAcceptance) {
  IdentityCertificate c = make({}, 100);
  clock.advance_ms(100'000);
  EXPECT_NO_THROW(validate(c, store(), clock));  // now == not_after is still valid
  clock.advance_ms(1'000);
  EXPECT_EQ(code_of([&] { validate(c, store(), clock); }), Errc::kExpired);
}

TEST_F(CertificateTest, NotYetValidGatesAcceptance) {
  IdentityCertificate c = make({}, 100);
  clock.advance_ms(-1'000);
  EXPECT_EQ(code_of([&] { validate(c, store(), clock); }), Errc::kNotYetValid);
}

TEST_F(CertificateTest, CheckOrderIsIssuerThenSignatureThenTime) {
  IdentityCertificate c = make({}, 10);
  c.body.subject.email = "forged@example.org";
  clock.advance_ms(60'000);
  // Both signature and time are broken; signature wins.
  EXPECT_EQ(code_of([&] { validate(c, store(), clock); }), Errc::kBadSignature);
  EXPECT_EQ(code_of([&] { validate(c, TrustStore{}, clock); }), Errc::kUnknownIssuer);
}

TEST_F(CertificateTest, ValidatedRolesAreCanonical) {
  IdentityCertificate c = make({Role("zeta"), Role("alpha"), Role("zeta"), Role("mid")});
  VerifiedIdentity v = validate(decode(encode(c)), store(), clock);
  EXPECT_TRUE(std::is_sorted(v.roles.begin(), v.roles.end()));
  EXPECT_EQ(v.roles.size(), 3u);
}

TEST_F(CertificateTest, TrustStoreRejectsDuplicateIssuer) {
  TrustStore t;
  t.add("home", issuer.pub);
  EXPECT_EQ(code_of([&] { t.add("home", subject.pub); }), Errc::kParameter);
}

TEST_F(CertificateTest, ArmorRoundTrips) {
  Bytes enc = encode(make());
  std::string text = armor(kCertificateLabel, enc);
  EXPECT_EQ(text.rfind("-----BEGIN SSO CERTIFICATE-----\n", 0), 0u);
  EXPECT_EQ(dearmor(kCertificateLabel, text), enc);
  EXPECT_EQ(code_of([&] { dearmor(kSecretKeyLabel, text); }), Errc::kMalformed);
  TrustAnchor a{"home", issuer.pub};
  TrustAnchor back = decode_anchor(encode_anchor(a));
  EXPECT_EQ(back.issuer_id, "home");
  EXPECT_EQ(back.key, issuer.pub);
}

TEST(Roles, ParseCanonicalises) {
  auto r = parse_roles(" staff, admin,staff ,,");
  EXPECT_EQ(join_roles(r), "admin,staff");
  EXPECT_TRUE(parse_roles("").empty());
  EXPECT_THROW(parse_roles("ok,Not-Ok"), Error);
}

}  // namespace
}  // namespace sso::cert
