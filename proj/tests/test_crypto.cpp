#include <gtest/gtest.h>

#include <functional>
#include <set>

#include "sso/crypto.hpp"
#include "sso/error.hpp"
#include "sso/tlv.hpp"
#include "support/sha256_reference.hpp"
#include "support/test_keys.hpp"

namespace sso::crypto {
namespace {

using sso::testing::reference_sha256;
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

TEST(Nonce, Is128Bytes) {
  Rng rng = Rng::from_seed(1);
  EXPECT_EQ(gen_nonce(rng).view().size(), 128u);
}

TEST(Nonce, SameSeedSameNonce) {
  Rng a = Rng::from_seed(42);
  Rng b = Rng::from_seed(42);
  EXPECT_EQ(gen_nonce(a), gen_nonce(b));
}

TEST(Nonce, StreamAdvances) {
  Rng rng = Rng::from_seed(42);
  EXPECT_NE(gen_nonce(rng), gen_nonce(rng));
}

TEST(Nonce, TenThousandPairwiseDistinct) {
  Rng rng = Rng::from_seed(7);
  std::set<Nonce> seen;
  for (int i = 0; i < 10000; ++i) seen.insert(gen_nonce(rng));
  EXPECT_EQ(seen.size(), 10000u);
}

TEST(Hash, EmptyInputMatchesPublishedVector) {
  // FIPS 180-4 example value for the empty message.
  EXPECT_EQ(to_hex(hash({}).view()),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(to_hex(hash(to_bytes("abc")).view()),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Hash, ReferenceOracleAgreesOnPublishedVectors) {
  auto ref = reference_sha256({});
  EXPECT_EQ(to_hex(ByteView(ref.data(), ref.size())),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  auto two_block = reference_sha256(to_bytes("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"));
  EXPECT_EQ(to_hex(ByteView(two_block.data(), two_block.size())),
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST(Hash, DoubleHashOfSeededNonceMatchesReference) {
  Rng rng = Rng::from_seed(2024);
  Nonce n = gen_nonce(rng);
  auto once = reference_sha256(n.to_bytes());
  auto twice = reference_sha256(std::vector<std::uint8_t>(once.begin(), once.end()));
  Digest got = hash(hash(n.view()).view());
  EXPECT_EQ(to_hex(got.view()), to_hex(ByteView(twice.data(), twice.size())));
}

TEST(Hash, DeterministicAndFixedLengthOverRandomInputs) {
  Rng rng = Rng::from_seed(3);
  for (int i = 0; i < 10000; ++i) {
    Bytes x = rng.bytes(rng.uniform(300));
    Digest a = hash(x);
    EXPECT_EQ(a, hash(x));
    ASSERT_EQ(a.view().size(), 32u);
    if (i % 500 == 0) {
      auto ref = reference_sha256(x);
      EXPECT_EQ(to_hex(a.view()), to_hex(ByteView(ref.data(), ref.size())));
    }
  }
}

TEST(Keypair, RejectsUnsupportedSize) {
  Rng rng = Rng::from_seed(1);
  EXPECT_EQ(code_of([&] { gen_keypair(512, rng); }), Errc::kParameter);
  EXPECT_EQ(code_of([&] { gen_keypair(4096, rng); }), Errc::kParameter);
}

TEST(Keypair, ModulusHasRequestedBitLength) {
  EXPECT_EQ(test_keypair(2048, 1).pub.bits(), 2048);
  EXPECT_EQ(test_keypair(1024, 1).pub.bits(), 1024);
}

TEST(Keypair, SameSeedSameKey) {
  Rng a = Rng::from_seed(99), b = Rng::from_seed(99);
  EXPECT_EQ(gen_keypair(1024, a).pub, gen_keypair(1024, b).pub);
}

TEST(Keypair, InverseKeysSignAndSeal) {
  const KeyPair& kp = test_keypair(2048, 1);
  Rng rng = Rng::from_seed(5);
  Bytes m = rng.bytes(32);
  EXPECT_TRUE(verify(kp.pub, m, sign(kp.sec, m)));
  EXPECT_EQ(open(kp.sec, seal(kp.pub, m, rng)), m);
}

TEST(Keypair, EncodingRoundTrips) {
  const KeyPair& kp = test_keypair(1024, 2);
  EXPECT_EQ(PublicKey::decode(kp.pub.encoded()), kp.pub);
  SecretKey sk = SecretKey::decode(kp.sec.encode());
  EXPECT_EQ(sk.public_key(), kp.pub);
  Bytes m = to_bytes("round trip");
  EXPECT_TRUE(verify(kp.pub, m, sign(sk, m)));
}

TEST(Keypair, SecretKeyWithMismatchedFactorsIsRejected) {
  Bytes a = test_keypair(1024, 2).sec.encode();
  Bytes b = test_keypair(1024, 3).sec.encode();
  // Splice b's primes onto a's modulus.
  tlv::Reader ra(a), rb(b);
  tlv::Writer w;
  w.put(1, ra.expect(1)).put(2, ra.expect(2)).put(3, ra.expect(3));
  rb.expect(1);
  rb.expect(2);
  rb.expect(3);
  w.put(4, rb.expect(4)).put(5, rb.expect(5));
  EXPECT_EQ(code_of([&] { SecretKey::decode(w.finish()); }), Errc::kMalformed);
}

TEST(Signature, RejectsOtherMessageAndOtherKey) {
  const KeyPair& kp = test_keypair(1024, 1);
  const KeyPair& other = test_keypair(1024, 2);
  Bytes m = to_bytes("message");
  Signature sig = sign(kp.sec, m);
  EXPECT_TRUE(verify(kp.pub, m, sig));
  EXPECT_FALSE(verify(kp.pub, to_bytes("messagf"), sig));
  EXPECT_FALSE(verify(other.pub, m, sig));
}

TEST(Signature, MalformedSignaturesFailCleanly) {
  const KeyPair& kp = test_keypair(1024, 1);
  Bytes m = to_bytes("message");
  Signature sig = sign(kp.sec, m);
  Signature flipped = sig;
  flipped.bytes[10] ^= 0x01;
  EXPECT_FALSE(verify(kp.pub, m, flipped));
  EXPECT_FALSE(verify(kp.pub, m, Bytes{}));
  EXPECT_FALSE(verify(kp.pub, m, Bytes(sig.bytes.size() + 1, 0xFF)));
  EXPECT_FALSE(verify(PublicKey{}, m, sig));
}

TEST(Signature, IsDeterministic) {
  const KeyPair& kp = test_keypair(1024, 1);
  EXPECT_EQ(sign(kp.sec, to_bytes("x")), sign(kp.sec, to_bytes("x")));
}

TEST(Signature, AnySingleBitFlipOfMessageFails) {
  const KeyPair& kp = test_keypair(1024, 1);
  Rng rng = Rng::from_seed(11);
  Bytes m = rng.bytes(48);
  Signature sig = sign(kp.sec, m);
  for (std::size_t bit = 0; bit < m.size() * 8; bit += 7) {
    Bytes mm = m;
    mm[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    EXPECT_FALSE(verify(kp.pub, mm, sig)) << "bit " << bit;
  }
}

TEST(SealedBox, RoundTripsOneKilobyte) {
  const KeyPair& kp = test_keypair(2048, 1);
  Rng rng = Rng::from_seed(8);
  Bytes m = rng.bytes(1024);
  EXPECT_EQ(open(kp.sec, seal(kp.pub, m, rng)), m);
}

TEST(SealedBox, FreshEphemeralKeyPerCall) {
  const KeyPair& kp = test_keypair(1024, 1);
  Rng rng = Rng::from_seed(8);
  Bytes m = to_bytes("same plaintext");
  SealedBox a = seal(kp.pub, m, rng), b = seal(kp.pub, m, rng);
  EXPECT_NE(a.wrapped_key, b.wrapped_key);
  EXPECT_NE(a.body, b.body);
}

TEST(SealedBox, WrongKeyFails) {
  Rng rng = Rng::from_seed(8);
  SealedBox box = seal(test_keypair(1024, 1).pub, to_bytes("secret"), rng);
  EXPECT_EQ(code_of([&] { open(test_keypair(1024, 2).sec, box); }), Errc::kDecryption);
}

TEST(SealedBox, TamperingEitherPartFails) {
  const KeyPair& kp = test_keypair(1024, 1);
  Rng rng = Rng::from_seed(9);
  SealedBox box = seal(kp.pub, to_bytes("secret payload"), rng);
  for (std::size_t i = 0; i < box.body.size(); ++i) {
    SealedBox t = box;
    t.body[i] ^= 0x80;
    EXPECT_EQ(code_of([&] { open(kp.sec, t); }), Errc::kDecryption) << "body byte " << i;
  }
  for (std::size_t i = 0; i < box.wrapped_key.size(); i += 5) {
    SealedBox t = box;
    t.wrapped_key[i] ^= 0x01;
    EXPECT_EQ(code_of([&] { open(kp.sec, t); }), Errc::kDecryption) << "wrapped byte " << i;
  }
  SealedBox truncated = box;
  truncated.body.resize(10);
  EXPECT_EQ(code_of([&] { open(kp.sec, truncated); }), Errc::kDecryption);
}

TEST(SealedBox, EncodingRoundTrips) {
  Rng rng = Rng::from_seed(10);
  SealedBox box = seal(test_keypair(1024, 1).pub, to_bytes("x"), rng);
  EXPECT_EQ(SealedBox::decode(box.encode()), box);
}

TEST(SealedBox, RandomPayloadRoundTripProperty) {
  const KeyPair& kp = test_keypair(1024, 4);
  Rng rng = Rng::from_seed(12);
  for (int i = 0; i < 50; ++i) {
    Bytes m = rng.bytes(rng.uniform(2000));
    EXPECT_EQ(open(kp.sec, seal(kp.pub, m, rng)), m);
  }
}

class SymmetricTest : public ::testing::TestWithParam<SymAlgorithm> {};

TEST_P(SymmetricTest, KeyLengthMatchesAlgorithm) {
  Rng rng = Rng::from_seed(1);
  SymKey k = gen_sym_key(GetParam(), rng);
  EXPECT_EQ(k.key.size(), GetParam() == SymAlgorithm::kModernAead ? 32u : 24u);
  EXPECT_NE(k, gen_sym_key(GetParam(), rng));
}

TEST_P(SymmetricTest, RoundTripFourKilobytes) {
  Rng rng = Rng::from_seed(2);
  SymKey k = gen_sym_key(GetParam(), rng);
  Bytes m = rng.bytes(4096);
  EXPECT_EQ(sym_decrypt(k, sym_encrypt(k, m, rng)), m);
}

TEST_P(SymmetricTest, EmptyPlaintextRoundTrips) {
  Rng rng = Rng::from_seed(3);
  SymKey k = gen_sym_key(GetParam(), rng);
  EXPECT_TRUE(sym_decrypt(k, sym_encrypt(k, {}, rng)).empty());
}

TEST_P(SymmetricTest, WrongKeyOrTamperIsAuthenticationFailure) {
  Rng rng = Rng::from_seed(4);
  SymKey k = gen_sym_key(GetParam(), rng);
  SymKey other = gen_sym_key(GetParam(), rng);
  Bytes ct = sym_encrypt(k, to_bytes("attack at dawn"), rng);
  EXPECT_EQ(code_of([&] { sym_decrypt(other, ct); }), Errc::kAuthentication);
  for (std::size_t i = 0; i < ct.size(); ++i) {
    Bytes t = ct;
    t[i] ^= 0x04;
    EXPECT_EQ(code_of([&] { sym_decrypt(k, t); }), Errc::kAuthentication) << "byte " << i;
  }
  EXPECT_EQ(code_of([&] { sym_decrypt(k, Bytes(3, 0)); }), Errc::kAuthentication);
}

TEST_P(SymmetricTest, KeyEncodingRoundTrips) {
  Rng rng = Rng::from_seed(5);
  SymKey k = gen_sym_key(GetParam(), rng);
  EXPECT_EQ(SymKey::decode(k.encode()), k);
}

INSTANTIATE_TEST_SUITE_P(Algorithms, SymmetricTest,
                         ::testing::Values(SymAlgorithm::kModernAead, SymAlgorithm::kLegacy3Des));

TEST(Symmetric, KeyOfWrongLengthIsParameterError) {
  Rng rng = Rng::from_seed(6);
  SymKey k{SymAlgorithm::kLegacy3Des, rng.bytes(32)};
  EXPECT_EQ(code_of([&] { sym_encrypt(k, to_bytes("x"), rng); }), Errc::kParameter);
}

TEST(Rng, UniformStaysInRange) {
  Rng rng = Rng::from_seed(1);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.uniform(7), 7u);
  EXPECT_THROW(rng.uniform(0), Error);
}

}  // namespace
}  // namespace sso::crypto
