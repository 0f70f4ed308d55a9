#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <limits>

#include "sso/bytes.hpp"
#include "sso/clock.hpp"
#include "sso/error.hpp"
#include "sso/rng.hpp"

namespace sso {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::kEntropy: return "entropy";
    case Errc::kParameter: return "parameter";
    case Errc::kDecryption: return "decryption-failure";
    case Errc::kAuthentication: return "authentication-failure";
    case Errc::kMalformed: return "malformed";
    case Errc::kEncoding: return "encoding";
    case Errc::kUnknownIssuer: return "unknown-issuer";
    case Errc::kBadSignature: return "bad-signature";
    case Errc::kExpired: return "expired";
    case Errc::kNotYetValid: return "not-yet-valid";
    case Errc::kBadMagic: return "bad-magic";
    case Errc::kUnknownVersion: return "unknown-version";
    case Errc::kUnknownType: return "unknown-type";
    case Errc::kLengthMismatch: return "length-mismatch";
    case Errc::kOversize: return "oversize";
    case Errc::kTruncated: return "truncated";
    case Errc::kProtocolOrder: return "protocol-order";
    case Errc::kFreshnessMismatch: return "freshness-mismatch";
    case Errc::kReplayDetected: return "replay-detected";
    case Errc::kBadPassword: return "bad-password";
    case Errc::kUnknownUser: return "unknown-user";
    case Errc::kAtCapacity: return "at-capacity";
    case Errc::kNonceMismatch: return "nonce-mismatch";
    case Errc::kKeyMismatch: return "key-mismatch";
    case Errc::kServerUntrusted: return "server-untrusted";
    case Errc::kCertInvalid: return "cert-invalid";
    case Errc::kBadChallengeSignature: return "bad-challenge-signature";
    case Errc::kReenrollNeeded: return "reenroll-needed";
    case Errc::kGiveUp: return "give-up";
    case Errc::kTimeout: return "timeout";
    case Errc::kDuplicateUsername: return "duplicate-username";
    case Errc::kIo: return "io";
    case Errc::kConfig: return "config";
    case Errc::kNetwork: return "network";
  }
  return "unknown";
}

// ---- bytes ----------------------------------------------------------------

Bytes concat(std::initializer_list<ByteView> parts) {
  std::size_t total = 0;
  for (auto p : parts) total += p.size();
  Bytes out;
  out.reserve(total);
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::string to_hex(ByteView b) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(b.size() * 2);
  for (auto c : b) {
    out.push_back(kDigits[c >> 4]);
    out.push_back(kDigits[c & 0xF]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) throw Error(Errc::kMalformed, "odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = nibble(hex[2 * i]);
    int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(Errc::kMalformed, "invalid hex digit");
    out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return out;
}

std::string base64_encode(ByteView b) {
  if (b.empty()) return {};
  std::string out(4 * ((b.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), b.data(),
                          static_cast<int>(b.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes base64_decode(std::string_view text) {
  if (text.empty()) return {};
  if (text.size() % 4 != 0) throw Error(Errc::kMalformed, "base64 length not a multiple of 4");
  for (char c : text) {
    bool ok = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
              c == '+' || c == '/' || c == '=';
    if (!ok) throw Error(Errc::kMalformed, "invalid base64 character");
  }
  Bytes out(3 * text.size() / 4);
  int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                          static_cast<int>(text.size()));
  if (n < 0) throw Error(Errc::kMalformed, "invalid base64");
  // EVP_DecodeBlock keeps the bytes that padding stands for; strip them.
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

bool contains(ByteView haystack, ByteView needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

void secure_wipe(std::span<std::uint8_t> b) noexcept {
  if (!b.empty()) OPENSSL_cleanse(b.data(), b.size());
}

void secure_wipe(std::string& s) noexcept {
  if (!s.empty()) OPENSSL_cleanse(s.data(), s.size());
  s.clear();
}

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(Bytes& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint16_t get_u16(ByteView in) {
  return static_cast<std::uint16_t>(in[0] << 8 | in[1]);
}

std::uint32_t get_u32(ByteView in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = v << 8 | in[i];
  return v;
}

std::uint64_t get_u64(ByteView in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = v << 8 | in[i];
  return v;
}

// ---- clock ----------------------------------------------------------------

std::int64_t SystemClock::now_ms() const {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

// ---- rng ------------------------------------------------------------------

namespace {
constexpr std::size_t kBlock = 512;
}

struct Rng::Impl {
  EVP_CIPHER_CTX* ctx = nullptr;
  std::uint8_t buf[kBlock];
  std::size_t pos = kBlock;

  ~Impl() {
    EVP_CIPHER_CTX_free(ctx);
    OPENSSL_cleanse(buf, sizeof buf);
  }
};

Rng::Rng(ByteView key) : impl_(std::make_unique<Impl>()) {
  impl_->ctx = EVP_CIPHER_CTX_new();
  std::uint8_t iv[16] = {0};
  if (impl_->ctx == nullptr ||
      EVP_EncryptInit_ex(impl_->ctx, EVP_chacha20(), nullptr, key.data(), iv) != 1) {
    throw Error(Errc::kEntropy, "cannot initialise keystream");
  }
}

Rng::Rng(Rng&&) noexcept = default;
Rng& Rng::operator=(Rng&&) noexcept = default;
Rng::~Rng() = default;

Rng Rng::from_seed(std::uint64_t seed) {
  Bytes s;
  put_u64(s, seed);
  return from_seed_bytes(s);
}

Rng Rng::from_seed_bytes(ByteView seed) {
  std::uint8_t key[SHA256_DIGEST_LENGTH];
  SHA256(seed.data(), seed.size(), key);
  Rng r(ByteView(key, sizeof key));
  OPENSSL_cleanse(key, sizeof key);
  return r;
}

Rng Rng::from_entropy() {
  std::uint8_t key[32];
  if (RAND_bytes(key, sizeof key) != 1) throw Error(Errc::kEntropy, "OS entropy unavailable");
  Rng r(ByteView(key, sizeof key));
  OPENSSL_cleanse(key, sizeof key);
  return r;
}

void Rng::refill() {
  static const std::uint8_t kZeros[kBlock] = {0};
  int len = 0;
  if (EVP_EncryptUpdate(impl_->ctx, impl_->buf, &len, kZeros, kBlock) != 1 ||
      len != static_cast<int>(kBlock)) {
    throw Error(Errc::kEntropy, "keystream failure");
  }
  impl_->pos = 0;
}

void Rng::fill(std::span<std::uint8_t> out) {
  std::size_t done = 0;
  while (done < out.size()) {
    if (impl_->pos == kBlock) refill();
    std::size_t n = std::min(out.size() - done, kBlock - impl_->pos);
    std::memcpy(out.data() + done, impl_->buf + impl_->pos, n);
    OPENSSL_cleanse(impl_->buf + impl_->pos, n);
    impl_->pos += n;
    done += n;
  }
}

Bytes Rng::bytes(std::size_t n) {
  Bytes out(n);
  fill(out);
  return out;
}

std::uint64_t Rng::next_u64() {
  std::uint8_t b[8];
  fill(b);
  return get_u64(ByteView(b, 8));
}

std::uint64_t Rng::uniform(std::uint64_t bound) {
  if (bound == 0) throw Error(Errc::kParameter, "uniform bound must be positive");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  for (;;) {
    std::uint64_t v = next_u64();
    if (v < limit) return v % bound;
  }
}

double Rng::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

bool Rng::bernoulli(double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform01() < p;
}

Rng Rng::fork(std::string_view label) {
  Bytes material = bytes(32);
  material.insert(material.end(), label.begin(), label.end());
  Rng child = from_seed_bytes(material);
  secure_wipe(material);
  return child;
}

}  // namespace sso
