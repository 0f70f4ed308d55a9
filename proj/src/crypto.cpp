#include "sso/crypto.hpp"

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/crypto.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/kdf.h>
#include <openssl/param_build.h>
#include <openssl/rsa.h>
#include <openssl/sha.h>

#include <vector>

#include "sso/error.hpp"
#include "sso/tlv.hpp"

namespace sso::crypto {

namespace {

struct BnDeleter {
  void operator()(BIGNUM* b) const { BN_clear_free(b); }
};
struct BnCtxDeleter {
  void operator()(BN_CTX* c) const { BN_CTX_free(c); }
};
struct PkeyDeleter {
  void operator()(EVP_PKEY* k) const { EVP_PKEY_free(k); }
};
struct PkeyCtxDeleter {
  void operator()(EVP_PKEY_CTX* c) const { EVP_PKEY_CTX_free(c); }
};
struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};
struct CipherCtxDeleter {
  void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};
struct ParamBldDeleter {
  void operator()(OSSL_PARAM_BLD* b) const { OSSL_PARAM_BLD_free(b); }
};
struct ParamDeleter {
  void operator()(OSSL_PARAM* p) const { OSSL_PARAM_free(p); }
};

using BnPtr = std::unique_ptr<BIGNUM, BnDeleter>;
using BnCtxPtr = std::unique_ptr<BN_CTX, BnCtxDeleter>;
using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;
using CipherCtxPtr = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

constexpr unsigned long kPublicExponent = 65537;

constexpr std::uint16_t kTagModulus = 0x0001;
constexpr std::uint16_t kTagExponent = 0x0002;
constexpr std::uint16_t kTagPrivateExponent = 0x0003;
constexpr std::uint16_t kTagPrime1 = 0x0004;
constexpr std::uint16_t kTagPrime2 = 0x0005;

constexpr std::uint16_t kTagSymAlg = 0x0001;
constexpr std::uint16_t kTagSymKey = 0x0002;

constexpr std::uint16_t kTagWrappedKey = 0x0001;
constexpr std::uint16_t kTagBody = 0x0002;

constexpr std::size_t kGcmIvSize = 12;
constexpr std::size_t kGcmTagSize = 16;
constexpr std::size_t kDesIvSize = 8;
constexpr std::size_t kHmacSize = 32;

[[noreturn]] void fail(Errc code, const char* what) {
  ERR_clear_error();
  throw Error(code, what);
}

BnPtr bn_new() {
  BnPtr b(BN_new());
  if (!b) fail(Errc::kParameter, "BN_new failed");
  return b;
}

BnPtr bn_from(ByteView b) {
  BnPtr out(BN_bin2bn(b.data(), static_cast<int>(b.size()), nullptr));
  if (!out) fail(Errc::kMalformed, "bad integer");
  return out;
}

Bytes bn_bytes(const BIGNUM* b) {
  Bytes out(static_cast<std::size_t>(BN_num_bytes(b)));
  BN_bn2bin(b, out.data());
  return out;
}

Bytes bn_bytes_padded(const BIGNUM* b, std::size_t len) {
  Bytes out(len);
  if (BN_bn2binpad(b, out.data(), static_cast<int>(len)) < 0) fail(Errc::kParameter, "integer too large");
  return out;
}

// Odd primes below 17864: enough sieve depth that most composites never
// reach a Miller-Rabin round.
const std::vector<std::uint32_t>& small_primes() {
  static const std::vector<std::uint32_t> primes = [] {
    constexpr std::uint32_t kLimit = 17864;
    std::vector<bool> composite(kLimit, false);
    std::vector<std::uint32_t> out;
    for (std::uint32_t i = 3; i < kLimit; i += 2) {
      if (composite[i]) continue;
      out.push_back(i);
      for (std::uint64_t j = std::uint64_t{i} * i; j < kLimit; j += 2 * i) composite[j] = true;
    }
    return out;
  }();
  return primes;
}

// Random prime with exactly `bits` bits and the top two bits set, so a
// product of two such primes has exactly 2*bits bits. p - 1 is coprime to e.
BnPtr generate_prime(int bits, Rng& rng, BN_CTX* ctx) {
  const auto& primes = small_primes();
  std::vector<std::uint32_t> residues(primes.size());
  constexpr std::uint32_t kMaxDelta = 1u << 20;
  for (;;) {
    Bytes raw = rng.bytes(static_cast<std::size_t>(bits) / 8);
    raw.front() |= 0xC0;
    raw.back() |= 0x01;
    BnPtr base = bn_from(raw);
    secure_wipe(raw);
    for (std::size_t i = 0; i < primes.size(); ++i) {
      BN_ULONG r = BN_mod_word(base.get(), primes[i]);
      if (r == static_cast<BN_ULONG>(-1)) fail(Errc::kParameter, "BN_mod_word failed");
      residues[i] = static_cast<std::uint32_t>(r);
    }
    for (std::uint32_t delta = 0; delta < kMaxDelta; delta += 2) {
      bool sieved = false;
      for (std::size_t i = 0; i < primes.size(); ++i) {
        if ((residues[i] + delta) % primes[i] == 0) {
          sieved = true;
          break;
        }
      }
      if (sieved) continue;
      BnPtr cand(BN_dup(base.get()));
      if (!cand || BN_add_word(cand.get(), delta) != 1) fail(Errc::kParameter, "BN_add_word failed");
      if (BN_num_bits(cand.get()) != bits) break;  // ran off the top; draw again
      if (BN_mod_word(cand.get(), kPublicExponent) == 1) continue;
      int prime = BN_check_prime(cand.get(), ctx, nullptr);
      if (prime < 0) fail(Errc::kParameter, "primality test failed");
      if (prime == 1) return cand;
    }
  }
}

PkeyPtr build_pkey(const BIGNUM* n, const BIGNUM* e, const BIGNUM* d, const BIGNUM* p,
                   const BIGNUM* q, BN_CTX* ctx) {
  std::unique_ptr<OSSL_PARAM_BLD, ParamBldDeleter> bld(OSSL_PARAM_BLD_new());
  if (!bld) fail(Errc::kParameter, "OSSL_PARAM_BLD_new failed");
  BnPtr dmp1, dmq1, iqmp;
  bool ok = OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_N, n) == 1 &&
            OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_E, e) == 1;
  int selection = EVP_PKEY_PUBLIC_KEY;
  if (d != nullptr) {
    selection = EVP_PKEY_KEYPAIR;
    dmp1 = bn_new();
    dmq1 = bn_new();
    iqmp = bn_new();
    BnPtr p1(BN_dup(p)), q1(BN_dup(q));
    ok = ok && p1 && q1 && BN_sub_word(p1.get(), 1) == 1 && BN_sub_word(q1.get(), 1) == 1 &&
         BN_mod(dmp1.get(), d, p1.get(), ctx) == 1 && BN_mod(dmq1.get(), d, q1.get(), ctx) == 1 &&
         BN_mod_inverse(iqmp.get(), q, p, ctx) != nullptr &&
         OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_D, d) == 1 &&
         OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_FACTOR1, p) == 1 &&
         OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_FACTOR2, q) == 1 &&
         OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_EXPONENT1, dmp1.get()) == 1 &&
         OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_EXPONENT2, dmq1.get()) == 1 &&
         OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_COEFFICIENT1, iqmp.get()) == 1;
  }
  if (!ok) fail(Errc::kMalformed, "cannot assemble RSA parameters");
  std::unique_ptr<OSSL_PARAM, ParamDeleter> params(OSSL_PARAM_BLD_to_param(bld.get()));
  PkeyCtxPtr pctx(EVP_PKEY_CTX_new_from_name(nullptr, "RSA", nullptr));
  EVP_PKEY* raw = nullptr;
  if (!params || !pctx || EVP_PKEY_fromdata_init(pctx.get()) != 1 ||
      EVP_PKEY_fromdata(pctx.get(), &raw, selection, params.get()) != 1) {
    fail(Errc::kMalformed, "cannot build RSA key");
  }
  return PkeyPtr(raw);
}

Bytes hkdf_sha256(ByteView ikm, std::string_view info, std::size_t len) {
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new_id(EVP_PKEY_HKDF, nullptr));
  Bytes out(len);
  std::size_t out_len = len;
  if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 ||
      EVP_PKEY_CTX_set_hkdf_md(ctx.get(), EVP_sha256()) != 1 ||
      EVP_PKEY_CTX_set1_hkdf_key(ctx.get(), ikm.data(), static_cast<int>(ikm.size())) != 1 ||
      EVP_PKEY_CTX_add1_hkdf_info(ctx.get(), reinterpret_cast<const unsigned char*>(info.data()),
                                  static_cast<int>(info.size())) != 1 ||
      EVP_PKEY_derive(ctx.get(), out.data(), &out_len) != 1) {
    fail(Errc::kParameter, "HKDF failed");
  }
  return out;
}

[[maybe_unused]] Bytes gcm_encrypt(ByteView key, ByteView iv, ByteView aad, ByteView plaintext) {
  CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
  Bytes out(plaintext.size() + kGcmTagSize);
  int len = 0, fin = 0;
  if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) != 1 ||
      EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(iv.size()), nullptr) != 1 ||
      EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), iv.data()) != 1 ||
      (!aad.empty() &&
       EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1) ||
      EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(),
                        static_cast<int>(plaintext.size())) != 1 ||
      EVP_EncryptFinal_ex(ctx.get(), out.data() + len, &fin) != 1 ||
      EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kGcmTagSize,
                          out.data() + plaintext.size()) != 1) {
    fail(Errc::kParameter, "AES-GCM encryption failed");
  }
  return out;
}

// Returns false on authentication failure.
[[maybe_unused]] bool gcm_decrypt(ByteView key, ByteView iv, ByteView aad, ByteView sealed, Bytes& out) {
  if (sealed.size() < kGcmTagSize) return false;
  const std::size_t ct_len = sealed.size() - kGcmTagSize;
  CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
  out.assign(ct_len, 0);
  Bytes tag(sealed.end() - kGcmTagSize, sealed.end());
  int len = 0, fin = 0;
  bool ok = ctx &&
            EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
            EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(iv.size()),
                                nullptr) == 1 &&
            EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), iv.data()) == 1 &&
            (aad.empty() || EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(),
                                              static_cast<int>(aad.size())) == 1) &&
            EVP_DecryptUpdate(ctx.get(), out.data(), &len, sealed.data(),
                              static_cast<int>(ct_len)) == 1 &&
            EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kGcmTagSize, tag.data()) == 1 &&
            EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &fin) == 1;
  if (!ok) {
    secure_wipe(out);
    out.clear();
    ERR_clear_error();
  }
  return ok;
}

Bytes des_mac_key(ByteView key) {
  static constexpr std::string_view kLabel = "sso-3des-mac";
  Bytes material = concat({ByteView(reinterpret_cast<const std::uint8_t*>(kLabel.data()), kLabel.size()), key});
  Digest d = hash(material);
  secure_wipe(material);
  return d.to_bytes();
}

Bytes hmac_sha256(ByteView key, ByteView data) {
  Bytes out(kHmacSize);
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(),
           out.data(), &len) == nullptr) {
    fail(Errc::kParameter, "HMAC failed");
  }
  return out;
}

[[maybe_unused]] Bytes des_encrypt(const SymKey& key, ByteView plaintext, Rng& rng) {
  Bytes iv = rng.bytes(kDesIvSize);
  CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
  Bytes ct(plaintext.size() + kDesIvSize);
  int len = 0, fin = 0;
  if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_des_ede3_cbc(), nullptr, key.key.data(), iv.data()) != 1 ||
      EVP_EncryptUpdate(ctx.get(), ct.data(), &len, plaintext.data(),
                        static_cast<int>(plaintext.size())) != 1 ||
      EVP_EncryptFinal_ex(ctx.get(), ct.data() + len, &fin) != 1) {
    fail(Errc::kParameter, "3DES encryption failed");
  }
  ct.resize(static_cast<std::size_t>(len + fin));
  Bytes out = concat({iv, ct});
  Bytes mac_key = des_mac_key(key.key);
  Bytes mac = hmac_sha256(mac_key, out);
  secure_wipe(mac_key);
  out.insert(out.end(), mac.begin(), mac.end());
  return out;
}

[[maybe_unused]] Bytes des_decrypt(const SymKey& key, ByteView in) {
  if (in.size() < kDesIvSize + kDesIvSize + kHmacSize) fail(Errc::kAuthentication, "ciphertext too short");
  ByteView authed = in.first(in.size() - kHmacSize);
  ByteView mac = in.last(kHmacSize);
  Bytes mac_key = des_mac_key(key.key);
  Bytes expect = hmac_sha256(mac_key, authed);
  secure_wipe(mac_key);
  if (CRYPTO_memcmp(expect.data(), mac.data(), kHmacSize) != 0) {
    fail(Errc::kAuthentication, "message authentication failed");
  }
  ByteView iv = authed.first(kDesIvSize);
  ByteView ct = authed.subspan(kDesIvSize);
  CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
  Bytes out(ct.size() + kDesIvSize);
  int len = 0, fin = 0;
  if (!ctx || EVP_DecryptInit_ex(ctx.get(), EVP_des_ede3_cbc(), nullptr, key.key.data(), iv.data()) != 1 ||
      EVP_DecryptUpdate(ctx.get(), out.data(), &len, ct.data(), static_cast<int>(ct.size())) != 1 ||
      EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &fin) != 1) {
    secure_wipe(out);
    fail(Errc::kAuthentication, "3DES decryption failed");
  }
  out.resize(static_cast<std::size_t>(len + fin));
  return out;
}

}  // namespace

// Private OpenSSL state behind PublicKey/SecretKey. Immutable once built.
struct RsaMaterial {
  PkeyPtr pkey;
  int bits = 0;
  Bytes n;
  Bytes e;
};

struct KeyAccess {
  static const RsaMaterial& material(const PublicKey& k) {
    if (!k.material_) fail(Errc::kParameter, "empty public key");
    return *k.material_;
  }
  static const RsaMaterial& material(const SecretKey& k) {
    if (!k.material_) fail(Errc::kParameter, "empty secret key");
    return *k.material_;
  }
  static PublicKey make_public(std::shared_ptr<const RsaMaterial> m) {
    PublicKey pk;
    pk.encoded_ = tlv::Writer().put(kTagModulus, m->n).put(kTagExponent, m->e).finish();
    pk.material_ = std::move(m);
    return pk;
  }
  static SecretKey make_secret(std::shared_ptr<const RsaMaterial> priv, PublicKey pub) {
    SecretKey sk;
    sk.material_ = std::move(priv);
    sk.public_ = std::move(pub);
    return sk;
  }
};

// ---- nonce, hash ----------------------------------------------------------

Nonce gen_nonce(Rng& rng) {
  Nonce n;
  rng.fill(n.raw());
  return n;
}

Digest hash(ByteView data) {
  Digest d;
  SHA256(data.data(), data.size(), d.raw().data());
  return d;
}

// ---- keys -----------------------------------------------------------------

int PublicKey::bits() const { return KeyAccess::material(*this).bits; }
std::size_t PublicKey::modulus_bytes() const { return static_cast<std::size_t>(bits()) / 8; }
int SecretKey::bits() const { return KeyAccess::material(*this).bits; }

namespace {

std::shared_ptr<const RsaMaterial> make_public_material(ByteView n_bytes, ByteView e_bytes) {
  BnPtr n = bn_from(n_bytes);
  BnPtr e = bn_from(e_bytes);
  int bits = BN_num_bits(n.get());
  if (bits != 1024 && bits != 2048) throw Error(Errc::kMalformed, "unsupported modulus size");
  if (!BN_is_odd(e.get()) || BN_is_one(e.get()) || BN_num_bits(e.get()) > 32) {
    throw Error(Errc::kMalformed, "bad public exponent");
  }
  BnCtxPtr ctx(BN_CTX_new());
  auto m = std::make_shared<RsaMaterial>();
  m->pkey = build_pkey(n.get(), e.get(), nullptr, nullptr, nullptr, ctx.get());
  m->bits = bits;
  m->n = bn_bytes(n.get());
  m->e = bn_bytes(e.get());
  // Reject non-canonical encodings (leading zero bytes) so encoding is a bijection.
  if (m->n.size() != n_bytes.size() || m->e.size() != e_bytes.size()) {
    throw Error(Errc::kMalformed, "non-canonical integer encoding");
  }
  return m;
}

KeyPair assemble(const BIGNUM* n, const BIGNUM* e, const BIGNUM* d, const BIGNUM* p,
                 const BIGNUM* q, BN_CTX* ctx) {
  auto priv = std::make_shared<RsaMaterial>();
  priv->pkey = build_pkey(n, e, d, p, q, ctx);
  priv->bits = BN_num_bits(n);
  priv->n = bn_bytes(n);
  priv->e = bn_bytes(e);
  PublicKey pub = KeyAccess::make_public(make_public_material(priv->n, priv->e));
  SecretKey sec = KeyAccess::make_secret(priv, pub);
  return KeyPair{std::move(pub), std::move(sec)};
}

}  // namespace

PublicKey PublicKey::decode(ByteView b) {
  tlv::Reader r(b);
  ByteView n = r.expect(kTagModulus);
  ByteView e = r.expect(kTagExponent);
  r.finish();
  return KeyAccess::make_public(make_public_material(n, e));
}

Bytes SecretKey::encode() const {
  const RsaMaterial& m = KeyAccess::material(*this);
  BIGNUM* d = nullptr;
  BIGNUM* p = nullptr;
  BIGNUM* q = nullptr;
  if (EVP_PKEY_get_bn_param(m.pkey.get(), OSSL_PKEY_PARAM_RSA_D, &d) != 1 ||
      EVP_PKEY_get_bn_param(m.pkey.get(), OSSL_PKEY_PARAM_RSA_FACTOR1, &p) != 1 ||
      EVP_PKEY_get_bn_param(m.pkey.get(), OSSL_PKEY_PARAM_RSA_FACTOR2, &q) != 1) {
    BN_clear_free(d);
    BN_clear_free(p);
    BN_clear_free(q);
    fail(Errc::kParameter, "cannot export secret key");
  }
  BnPtr dd(d), pp(p), qq(q);
  Bytes db = bn_bytes(d), pb = bn_bytes(p), qb = bn_bytes(q);
  Bytes out = tlv::Writer()
                  .put(kTagModulus, m.n)
                  .put(kTagExponent, m.e)
                  .put(kTagPrivateExponent, db)
                  .put(kTagPrime1, pb)
                  .put(kTagPrime2, qb)
                  .finish();
  secure_wipe(db);
  secure_wipe(pb);
  secure_wipe(qb);
  return out;
}

SecretKey SecretKey::decode(ByteView b) {
  tlv::Reader r(b);
  BnPtr n = bn_from(r.expect(kTagModulus));
  BnPtr e = bn_from(r.expect(kTagExponent));
  BnPtr d = bn_from(r.expect(kTagPrivateExponent));
  BnPtr p = bn_from(r.expect(kTagPrime1));
  BnPtr q = bn_from(r.expect(kTagPrime2));
  r.finish();
  BnCtxPtr ctx(BN_CTX_new());
  BnPtr product = bn_new();
  if (BN_mul(product.get(), p.get(), q.get(), ctx.get()) != 1 || BN_cmp(product.get(), n.get()) != 0) {
    throw Error(Errc::kMalformed, "secret key factors do not match modulus");
  }
  int bits = BN_num_bits(n.get());
  if (bits != 1024 && bits != 2048) throw Error(Errc::kMalformed, "unsupported modulus size");
  KeyPair kp = assemble(n.get(), e.get(), d.get(), p.get(), q.get(), ctx.get());
  // A key whose exponents are not inverses would sign garbage; probe it.
  static constexpr std::uint8_t kProbe[] = {'k', 'e', 'y', '-', 'p', 'r', 'o', 'b', 'e'};
  if (!verify(kp.pub, kProbe, sign(kp.sec, kProbe))) {
    throw Error(Errc::kMalformed, "secret key exponents are inconsistent");
  }
  return kp.sec;
}

KeyPair gen_keypair(int bits, Rng& rng) {
  if (bits != 1024 && bits != 2048) throw Error(Errc::kParameter, "key size must be 1024 or 2048 bits");
  BnCtxPtr ctx(BN_CTX_new());
  if (!ctx) fail(Errc::kParameter, "BN_CTX_new failed");
  BnPtr e = bn_new();
  BN_set_word(e.get(), kPublicExponent);
  for (;;) {
    BnPtr p = generate_prime(bits / 2, rng, ctx.get());
    BnPtr q = generate_prime(bits / 2, rng, ctx.get());
    if (BN_cmp(p.get(), q.get()) == 0) continue;
    if (BN_cmp(p.get(), q.get()) < 0) std::swap(p, q);
    BnPtr n = bn_new(), p1(BN_dup(p.get())), q1(BN_dup(q.get()));
    BnPtr phi = bn_new(), g = bn_new(), lambda = bn_new(), rem = bn_new(), d = bn_new();
    if (BN_mul(n.get(), p.get(), q.get(), ctx.get()) != 1 || BN_sub_word(p1.get(), 1) != 1 ||
        BN_sub_word(q1.get(), 1) != 1 || BN_mul(phi.get(), p1.get(), q1.get(), ctx.get()) != 1 ||
        BN_gcd(g.get(), p1.get(), q1.get(), ctx.get()) != 1 ||
        BN_div(lambda.get(), rem.get(), phi.get(), g.get(), ctx.get()) != 1) {
      fail(Errc::kParameter, "RSA arithmetic failed");
    }
    if (BN_num_bits(n.get()) != bits) continue;
    if (BN_mod_inverse(d.get(), e.get(), lambda.get(), ctx.get()) == nullptr) {
      ERR_clear_error();
      continue;
    }
    return assemble(n.get(), e.get(), d.get(), p.get(), q.get(), ctx.get());
  }
}

// ---- signatures -----------------------------------------------------------

Signature sign(const SecretKey& sk, ByteView data) {
  const RsaMaterial& m = KeyAccess::material(sk);
  MdCtxPtr ctx(EVP_MD_CTX_new());
  EVP_PKEY_CTX* pctx = nullptr;
  Signature sig;
  sig.bytes.resize(static_cast<std::size_t>(m.bits) / 8);
  std::size_t len = sig.bytes.size();
  if (!ctx || EVP_DigestSignInit(ctx.get(), &pctx, EVP_sha256(), nullptr, m.pkey.get()) != 1 ||
      EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PADDING) != 1 ||
      EVP_DigestSign(ctx.get(), sig.bytes.data(), &len, data.data(), data.size()) != 1) {
    fail(Errc::kParameter, "signing failed");
  }
  sig.bytes.resize(len);
  return sig;
}

bool verify(const PublicKey& pk, ByteView data, ByteView sig) noexcept {
  if (!pk.valid()) return false;
  const RsaMaterial& m = KeyAccess::material(pk);
  if (sig.size() != static_cast<std::size_t>(m.bits) / 8) return false;
  MdCtxPtr ctx(EVP_MD_CTX_new());
  EVP_PKEY_CTX* pctx = nullptr;
  bool ok = ctx && EVP_DigestVerifyInit(ctx.get(), &pctx, EVP_sha256(), nullptr, m.pkey.get()) == 1 &&
            EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PADDING) == 1 &&
            EVP_DigestVerify(ctx.get(), sig.data(), sig.size(), data.data(), data.size()) == 1;
  ERR_clear_error();
  return ok;
}

// ---- symmetric ------------------------------------------------------------

std::size_t sym_key_size(SymAlgorithm alg) {
  switch (alg) {
    case SymAlgorithm::kModernAead: return 32;
    case SymAlgorithm::kLegacy3Des: return 24;
  }
  throw Error(Errc::kParameter, "unknown symmetric algorithm");
}

Bytes SymKey::encode() const {
  return tlv::Writer().put_u8(kTagSymAlg, static_cast<std::uint8_t>(algorithm)).put(kTagSymKey, key).finish();
}

SymKey SymKey::decode(ByteView b) {
  tlv::Reader r(b);
  std::uint8_t alg = r.expect_u8(kTagSymAlg);
  if (alg != static_cast<std::uint8_t>(SymAlgorithm::kModernAead) &&
      alg != static_cast<std::uint8_t>(SymAlgorithm::kLegacy3Des)) {
    throw Error(Errc::kMalformed, "unknown symmetric algorithm tag");
  }
  SymKey k;
  k.algorithm = static_cast<SymAlgorithm>(alg);
  ByteView key = r.expect(kTagSymKey, sym_key_size(k.algorithm));
  r.finish();
  k.key.assign(key.begin(), key.end());
  return k;
}

SymKey gen_sym_key(SymAlgorithm alg, Rng& rng) {
  SymKey k;
  k.algorithm = alg;
  k.key = rng.bytes(sym_key_size(alg));
  return k;
}

Bytes sym_encrypt(const SymKey& key, ByteView plaintext, Rng& rng) {
  if (key.key.size() != sym_key_size(key.algorithm)) throw Error(Errc::kParameter, "key length does not match algorithm");
#ifdef SSO_DISABLE_SEALING
  // Negative-control build: confidentiality off so wire audits must fail.
  (void)rng;
  return Bytes(plaintext.begin(), plaintext.end());
#else
  if (key.algorithm == SymAlgorithm::kLegacy3Des) return des_encrypt(key, plaintext, rng);
  Bytes iv = rng.bytes(kGcmIvSize);
  Bytes ct = gcm_encrypt(key.key, iv, {}, plaintext);
  return concat({iv, ct});
#endif
}

Bytes sym_decrypt(const SymKey& key, ByteView ciphertext) {
  if (key.key.size() != sym_key_size(key.algorithm)) throw Error(Errc::kParameter, "key length does not match algorithm");
#ifdef SSO_DISABLE_SEALING
  return Bytes(ciphertext.begin(), ciphertext.end());
#else
  if (key.algorithm == SymAlgorithm::kLegacy3Des) return des_decrypt(key, ciphertext);
  if (ciphertext.size() < kGcmIvSize + kGcmTagSize) fail(Errc::kAuthentication, "ciphertext too short");
  Bytes out;
  if (!gcm_decrypt(key.key, ciphertext.first(kGcmIvSize), {}, ciphertext.subspan(kGcmIvSize), out)) {
    fail(Errc::kAuthentication, "message authentication failed");
  }
  return out;
#endif
}

// ---- sealed box -----------------------------------------------------------

Bytes SealedBox::encode() const {
  return tlv::Writer().put(kTagWrappedKey, wrapped_key).put(kTagBody, body).finish();
}

SealedBox SealedBox::decode(ByteView b) {
  tlv::Reader r(b);
  SealedBox box;
  ByteView w = r.expect(kTagWrappedKey);
  ByteView body = r.expect(kTagBody);
  r.finish();
  box.wrapped_key.assign(w.begin(), w.end());
  box.body.assign(body.begin(), body.end());
  return box;
}

namespace {
constexpr std::string_view kSealInfo = "sso sealed box v1";
}

SealedBox seal(const PublicKey& pk, ByteView plaintext, Rng& rng) {
  if (plaintext.size() >= (std::size_t{1} << 32)) throw Error(Errc::kParameter, "plaintext too large");
  const RsaMaterial& m = KeyAccess::material(pk);
  const std::size_t mod_len = static_cast<std::size_t>(m.bits) / 8;
  BnCtxPtr ctx(BN_CTX_new());
  BnPtr n = bn_from(m.n), e = bn_from(m.e);
  // Uniform-enough secret integer in [0, n): 64 extra bits make the
  // reduction bias negligible.
  Bytes raw = rng.bytes(mod_len + 8);
  BnPtr r = bn_from(raw), rr = bn_new(), c = bn_new();
  secure_wipe(raw);
  if (BN_mod(rr.get(), r.get(), n.get(), ctx.get()) != 1 ||
      BN_mod_exp(c.get(), rr.get(), e.get(), n.get(), ctx.get()) != 1) {
    fail(Errc::kParameter, "RSA encryption failed");
  }
  SealedBox box;
  box.wrapped_key = bn_bytes_padded(c.get(), mod_len);
  Bytes secret = bn_bytes_padded(rr.get(), mod_len);
  Bytes key = hkdf_sha256(secret, kSealInfo, 32);
  secure_wipe(secret);
  Bytes iv = rng.bytes(kGcmIvSize);
#ifdef SSO_DISABLE_SEALING
  box.body = concat({iv, plaintext});
#else
  box.body = concat({iv, gcm_encrypt(key, iv, box.wrapped_key, plaintext)});
#endif
  secure_wipe(key);
  return box;
}

Bytes open(const SecretKey& sk, const SealedBox& box) {
  const RsaMaterial& m = KeyAccess::material(sk);
  [[maybe_unused]] const std::size_t mod_len = static_cast<std::size_t>(m.bits) / 8;
#ifdef SSO_DISABLE_SEALING
  if (box.body.size() < kGcmIvSize) fail(Errc::kDecryption, "cannot open sealed box");
  return Bytes(box.body.begin() + kGcmIvSize, box.body.end());
#else
  if (box.wrapped_key.size() != mod_len || box.body.size() < kGcmIvSize + kGcmTagSize) {
    fail(Errc::kDecryption, "cannot open sealed box");
  }
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new_from_pkey(nullptr, m.pkey.get(), nullptr));
  Bytes secret(mod_len);
  std::size_t len = mod_len;
  if (!ctx || EVP_PKEY_decrypt_init(ctx.get()) != 1 ||
      EVP_PKEY_CTX_set_rsa_padding(ctx.get(), RSA_NO_PADDING) != 1 ||
      EVP_PKEY_decrypt(ctx.get(), secret.data(), &len, box.wrapped_key.data(), mod_len) != 1 ||
      len != mod_len) {
    secure_wipe(secret);
    fail(Errc::kDecryption, "cannot open sealed box");
  }
  Bytes key = hkdf_sha256(secret, kSealInfo, 32);
  secure_wipe(secret);
  Bytes out;
  ByteView body(box.body);
  bool ok = gcm_decrypt(key, body.first(kGcmIvSize), box.wrapped_key, body.subspan(kGcmIvSize), out);
  secure_wipe(key);
  if (!ok) fail(Errc::kDecryption, "cannot open sealed box");
  return out;
#endif
}

}  // namespace sso::crypto
