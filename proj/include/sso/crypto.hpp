#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>

#include "sso/bytes.hpp"
#include "sso/error.hpp"
#include "sso/rng.hpp"

// Cryptographic primitives consumed by the protocol. Backed by OpenSSL, but
// every random choice (nonces, primes, IVs, ephemeral keys) is drawn from the
// caller's Rng so a fixed seed reproduces every byte.
//
// Fixed suite:
//   hash        SHA-256
//   signatures  RSA PKCS#1 v1.5 over SHA-256 (deterministic padding)
//   sealing     RSA-KEM (raw RSA on a random integer) -> HKDF-SHA256 ->
//               AES-256-GCM, wrapped key bound as associated data
//   symmetric   AES-256-GCM (modern) or 3DES-CBC + HMAC-SHA256 (legacy)
namespace sso::crypto {

inline constexpr std::size_t kNonceSize = 128;
inline constexpr std::size_t kDigestSize = 32;
inline constexpr int kDefaultKeyBits = 2048;

template <std::size_t N, class Tag>
class FixedBytes {
 public:
  static constexpr std::size_t kSize = N;

  FixedBytes() = default;
  // Throws Error(kMalformed) unless b.size() == N.
  static FixedBytes from_bytes(ByteView b);

  ByteView view() const { return ByteView(data_.data(), N); }
  Bytes to_bytes() const { return Bytes(data_.begin(), data_.end()); }
  std::array<std::uint8_t, N>& raw() { return data_; }

  friend bool operator==(const FixedBytes&, const FixedBytes&) = default;
  friend auto operator<=>(const FixedBytes&, const FixedBytes&) = default;

 private:
  std::array<std::uint8_t, N> data_{};
};

template <std::size_t N, class Tag>
FixedBytes<N, Tag> FixedBytes<N, Tag>::from_bytes(ByteView b) {
  if (b.size() != N) throw Error(Errc::kMalformed, "fixed-size value has wrong length");
  FixedBytes out;
  std::copy(b.begin(), b.end(), out.data_.begin());
  return out;
}

struct NonceTag {};
struct DigestTag {};
using Nonce = FixedBytes<kNonceSize, NonceTag>;
using Digest = FixedBytes<kDigestSize, DigestTag>;

Nonce gen_nonce(Rng& rng);
Digest hash(ByteView data);

struct RsaMaterial;

class PublicKey {
 public:
  PublicKey() = default;
  int bits() const;
  std::size_t modulus_bytes() const;
  // Canonical encoding: TLV(modulus, exponent), big-endian unsigned.
  const Bytes& encoded() const { return encoded_; }
  // Throws Error(kMalformed) for anything but a 1024- or 2048-bit RSA key.
  static PublicKey decode(ByteView b);
  bool valid() const { return material_ != nullptr; }

  friend bool operator==(const PublicKey& a, const PublicKey& b) {
    return a.encoded_ == b.encoded_;
  }

 private:
  friend class SecretKey;
  friend struct KeyAccess;
  std::shared_ptr<const RsaMaterial> material_;
  Bytes encoded_;
};

class SecretKey {
 public:
  SecretKey() = default;
  int bits() const;
  const PublicKey& public_key() const { return public_; }
  // TLV(n, e, d, p, q). Secret; callers must wipe copies they no longer need.
  Bytes encode() const;
  static SecretKey decode(ByteView b);
  bool valid() const { return material_ != nullptr; }

 private:
  friend struct KeyAccess;
  std::shared_ptr<const RsaMaterial> material_;
  PublicKey public_;
};

struct KeyPair {
  PublicKey pub;
  SecretKey sec;
};

// bits must be 1024 or 2048 (Error(kParameter) otherwise).
KeyPair gen_keypair(int bits, Rng& rng);

struct Signature {
  Bytes bytes;
  friend bool operator==(const Signature&, const Signature&) = default;
};

Signature sign(const SecretKey& sk, ByteView data);
// Never throws; malformed input just fails verification.
bool verify(const PublicKey& pk, ByteView data, ByteView sig) noexcept;
inline bool verify(const PublicKey& pk, ByteView data, const Signature& sig) noexcept {
  return verify(pk, data, sig.bytes);
}

enum class SymAlgorithm : std::uint8_t {
  kModernAead = 1,  // AES-256-GCM, 32-byte key
  kLegacy3Des = 2,  // 3DES-EDE-CBC + HMAC-SHA256, 24-byte key
};

std::size_t sym_key_size(SymAlgorithm alg);

struct SymKey {
  SymAlgorithm algorithm = SymAlgorithm::kModernAead;
  Bytes key;

  // TLV(algorithm, key bytes).
  Bytes encode() const;
  static SymKey decode(ByteView b);
  void wipe() noexcept { secure_wipe(key); key.clear(); }
  friend bool operator==(const SymKey&, const SymKey&) = default;
};

SymKey gen_sym_key(SymAlgorithm alg, Rng& rng);
Bytes sym_encrypt(const SymKey& key, ByteView plaintext, Rng& rng);
// Throws Error(kAuthentication) on a wrong key or any tampering.
Bytes sym_decrypt(const SymKey& key, ByteView ciphertext);

struct SealedBox {
  Bytes wrapped_key;  // RSA ciphertext, modulus length
  Bytes body;         // iv || AES-256-GCM ciphertext || tag

  Bytes encode() const;
  static SealedBox decode(ByteView b);
  friend bool operator==(const SealedBox&, const SealedBox&) = default;
};

SealedBox seal(const PublicKey& pk, ByteView plaintext, Rng& rng);
// Throws Error(kDecryption) for a wrong key or tampering, without saying which.
Bytes open(const SecretKey& sk, const SealedBox& box);

}  // namespace sso::crypto
