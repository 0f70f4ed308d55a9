#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sso/bytes.hpp"
#include "sso/clock.hpp"
#include "sso/crypto.hpp"

namespace sso::cert {

inline constexpr std::size_t kMaxSubjectField = 255;
inline constexpr std::size_t kMaxIssuerId = 255;
inline constexpr std::size_t kMaxRoleLength = 64;
inline constexpr std::int64_t kDefaultValiditySeconds = 24 * 60 * 60;

struct SubjectInfo {
  std::string username;
  std::string location;
  std::string organization;
  std::string email;

  friend bool operator==(const SubjectInfo&, const SubjectInfo&) = default;
};

// RBAC role identifier, [a-z0-9_-]{1,64}.
class Role {
 public:
  // Throws Error(kParameter) for an invalid name.
  explicit Role(std::string name);
  static bool is_valid(std::string_view name);

  const std::string& name() const { return name_; }
  friend auto operator<=>(const Role&, const Role&) = default;
  friend bool operator==(const Role&, const Role&) = default;

 private:
  std::string name_;
};

// Sorted, duplicate-free copy.
std::vector<Role> canonical_roles(std::vector<Role> roles);
// Parses "a,b,c"; whitespace around names is ignored, empty list allowed.
std::vector<Role> parse_roles(std::string_view csv);
std::string join_roles(const std::vector<Role>& roles);

using Serial = std::array<std::uint8_t, 16>;

// Everything the issuer signs.
struct CertificateBody {
  Serial serial{};
  SubjectInfo subject;
  std::string issuer_id;
  std::int64_t not_before = 0;
  std::int64_t not_after = 0;
  std::vector<Role> roles;
  crypto::PublicKey subject_public_key;
};

struct IdentityCertificate {
  CertificateBody body;
  crypto::Signature issuer_signature;
};

bool operator==(const CertificateBody& a, const CertificateBody& b);
bool operator==(const IdentityCertificate& a, const IdentityCertificate& b);

// Canonical to-be-signed bytes: fields in declaration order, each as
// TLV(tag, value); roles are one field holding 2-byte-length-prefixed
// names in sorted order. Throws Error(kEncoding) when a field is over its
// length limit or a body invariant is broken.
Bytes encode_tbs(const CertificateBody& body);
Bytes encode(const IdentityCertificate& cert);
// Strict inverse of encode. Throws Error(kMalformed).
IdentityCertificate decode(ByteView bytes);

class TrustStore {
 public:
  // Throws Error(kParameter) for a duplicate issuer id.
  void add(std::string issuer_id, crypto::PublicKey key);
  const crypto::PublicKey* find(std::string_view issuer_id) const;
  std::size_t size() const { return issuers_.size(); }

 private:
  std::map<std::string, crypto::PublicKey, std::less<>> issuers_;
};

struct VerifiedIdentity {
  SubjectInfo subject;
  std::vector<Role> roles;
  crypto::PublicKey subject_public_key;
  std::string issuer_id;
  Serial serial{};
  std::int64_t not_after = 0;
};

// Throws Error(kParameter) for a bad subject, role list or validity.
IdentityCertificate issue(const crypto::SecretKey& issuer_key, std::string issuer_id,
                          SubjectInfo subject, std::vector<Role> roles,
                          crypto::PublicKey subject_key, std::int64_t validity_seconds,
                          const Clock& clock, Rng& rng);

// Checks, in this order: known issuer, issuer signature over encode_tbs,
// not_before <= now <= not_after. Throws Error with kUnknownIssuer,
// kBadSignature, kNotYetValid or kExpired.
VerifiedIdentity validate(const IdentityCertificate& cert, const TrustStore& trust,
                          const Clock& clock);
// As above, decoding first (kMalformed on failure).
VerifiedIdentity validate(ByteView encoded, const TrustStore& trust, const Clock& clock);

// ---- text envelopes ---------------------------------------------------------
//
//   -----BEGIN <LABEL>-----
//   base64, 64 columns
//   -----END <LABEL>-----

inline constexpr std::string_view kCertificateLabel = "SSO CERTIFICATE";
inline constexpr std::string_view kSecretKeyLabel = "SSO SECRET KEY";
inline constexpr std::string_view kTrustAnchorLabel = "SSO TRUST ANCHOR";

std::string armor(std::string_view label, ByteView der);
// Returns the payload of the first block with this label. Throws
// Error(kMalformed) if absent or corrupt.
Bytes dearmor(std::string_view label, std::string_view text);

// Trust anchor file content: TLV(issuer id, public key).
struct TrustAnchor {
  std::string issuer_id;
  crypto::PublicKey key;
};
std::string encode_anchor(const TrustAnchor& anchor);
TrustAnchor decode_anchor(std::string_view text);

}  // namespace sso::cert
