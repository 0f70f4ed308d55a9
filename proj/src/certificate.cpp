#include "sso/certificate.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "sso/error.hpp"
#include "sso/tlv.hpp"

namespace sso::cert {

namespace {

enum Tag : std::uint16_t {
  kSerial = 0x0001,
  kUsername = 0x0002,
  kLocation = 0x0003,
  kOrganization = 0x0004,
  kEmail = 0x0005,
  kIssuer = 0x0006,
  kNotBefore = 0x0007,
  kNotAfter = 0x0008,
  kRoles = 0x0009,
  kSubjectKey = 0x000A,
  kSignature = 0x000B,
};

constexpr std::uint16_t kAnchorIssuer = 0x0001;
constexpr std::uint16_t kAnchorKey = 0x0002;

void check_subject(const SubjectInfo& s, Errc code) {
  if (s.username.empty()) throw Error(code, "subject username is empty");
  for (const std::string* f : {&s.username, &s.location, &s.organization, &s.email}) {
    if (f->size() > kMaxSubjectField) throw Error(code, "subject field longer than 255 bytes");
  }
}

Bytes encode_roles(const std::vector<Role>& roles) {
  Bytes out;
  for (const Role& r : canonical_roles(roles)) {
    put_u16(out, static_cast<std::uint16_t>(r.name().size()));
    out.insert(out.end(), r.name().begin(), r.name().end());
  }
  return out;
}

std::vector<Role> decode_roles(ByteView in) {
  std::vector<Role> roles;
  std::size_t pos = 0;
  while (pos < in.size()) {
    if (in.size() - pos < 2) throw Error(Errc::kMalformed, "truncated role length");
    std::size_t len = get_u16(in.subspan(pos, 2));
    pos += 2;
    if (len > in.size() - pos) throw Error(Errc::kMalformed, "role overruns field");
    std::string name = to_string(in.subspan(pos, len));
    pos += len;
    if (!Role::is_valid(name)) throw Error(Errc::kMalformed, "invalid role name");
    Role role(std::move(name));
    if (!roles.empty() && !(roles.back() < role)) {
      throw Error(Errc::kMalformed, "roles not in canonical order");
    }
    roles.push_back(std::move(role));
  }
  return roles;
}

}  // namespace

Role::Role(std::string name) : name_(std::move(name)) {
  if (!is_valid(name_)) throw Error(Errc::kParameter, fmt::format("invalid role name '{}'", name_));
}

bool Role::is_valid(std::string_view name) {
  if (name.empty() || name.size() > kMaxRoleLength) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

std::vector<Role> canonical_roles(std::vector<Role> roles) {
  std::sort(roles.begin(), roles.end());
  roles.erase(std::unique(roles.begin(), roles.end()), roles.end());
  return roles;
}

std::vector<Role> parse_roles(std::string_view csv) {
  std::vector<Role> roles;
  while (!csv.empty()) {
    std::size_t comma = csv.find(',');
    std::string_view item = csv.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) roles.emplace_back(std::string(item));
    if (comma == std::string_view::npos) break;
    csv.remove_prefix(comma + 1);
  }
  return canonical_roles(std::move(roles));
}

std::string join_roles(const std::vector<Role>& roles) {
  std::string out;
  for (const Role& r : roles) {
    if (!out.empty()) out += ',';
    out += r.name();
  }
  return out;
}

bool operator==(const CertificateBody& a, const CertificateBody& b) {
  return a.serial == b.serial && a.subject == b.subject && a.issuer_id == b.issuer_id &&
         a.not_before == b.not_before && a.not_after == b.not_after &&
         canonical_roles(a.roles) == canonical_roles(b.roles) &&
         a.subject_public_key == b.subject_public_key;
}

bool operator==(const IdentityCertificate& a, const IdentityCertificate& b) {
  return a.body == b.body && a.issuer_signature == b.issuer_signature;
}

Bytes encode_tbs(const CertificateBody& body) {
  check_subject(body.subject, Errc::kEncoding);
  if (body.issuer_id.empty() || body.issuer_id.size() > kMaxIssuerId) {
    throw Error(Errc::kEncoding, "issuer id empty or longer than 255 bytes");
  }
  if (body.not_before >= body.not_after) throw Error(Errc::kEncoding, "empty validity window");
  if (!body.subject_public_key.valid()) throw Error(Errc::kEncoding, "missing subject public key");
  tlv::Writer w;
  w.put(kSerial, body.serial)
      .put_string(kUsername, body.subject.username)
      .put_string(kLocation, body.subject.location)
      .put_string(kOrganization, body.subject.organization)
      .put_string(kEmail, body.subject.email)
      .put_string(kIssuer, body.issuer_id)
      .put_i64(kNotBefore, body.not_before)
      .put_i64(kNotAfter, body.not_after)
      .put(kRoles, encode_roles(body.roles))
      .put(kSubjectKey, body.subject_public_key.encoded());
  return w.finish();
}

Bytes encode(const IdentityCertificate& cert) {
  Bytes out = encode_tbs(cert.body);
  tlv::Writer sig;
  sig.put(kSignature, cert.issuer_signature.bytes);
  const Bytes& s = sig.bytes();
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

IdentityCertificate decode(ByteView bytes) {
  tlv::Reader r(bytes);
  IdentityCertificate c;
  CertificateBody& b = c.body;
  ByteView serial = r.expect(kSerial, b.serial.size());
  std::copy(serial.begin(), serial.end(), b.serial.begin());
  b.subject.username = r.expect_string(kUsername, kMaxSubjectField);
  b.subject.location = r.expect_string(kLocation, kMaxSubjectField);
  b.subject.organization = r.expect_string(kOrganization, kMaxSubjectField);
  b.subject.email = r.expect_string(kEmail, kMaxSubjectField);
  b.issuer_id = r.expect_string(kIssuer, kMaxIssuerId);
  b.not_before = r.expect_i64(kNotBefore);
  b.not_after = r.expect_i64(kNotAfter);
  b.roles = decode_roles(r.expect(kRoles));
  b.subject_public_key = crypto::PublicKey::decode(r.expect(kSubjectKey));
  ByteView sig = r.expect(kSignature);
  r.finish();
  c.issuer_signature.bytes.assign(sig.begin(), sig.end());
  if (b.subject.username.empty()) throw Error(Errc::kMalformed, "empty username");
  if (b.issuer_id.empty()) throw Error(Errc::kMalformed, "empty issuer id");
  if (b.not_before >= b.not_after) throw Error(Errc::kMalformed, "empty validity window");
  return c;
}

void TrustStore::add(std::string issuer_id, crypto::PublicKey key) {
  if (!issuers_.emplace(std::move(issuer_id), std::move(key)).second) {
    throw Error(Errc::kParameter, "duplicate issuer id in trust store");
  }
}

const crypto::PublicKey* TrustStore::find(std::string_view issuer_id) const {
  auto it = issuers_.find(issuer_id);
  return it == issuers_.end() ? nullptr : &it->second;
}

IdentityCertificate issue(const crypto::SecretKey& issuer_key, std::string issuer_id,
                          SubjectInfo subject, std::vector<Role> roles,
                          crypto::PublicKey subject_key, std::int64_t validity_seconds,
                          const Clock& clock, Rng& rng) {
  if (validity_seconds <= 0) throw Error(Errc::kParameter, "validity must be positive");
  check_subject(subject, Errc::kParameter);
  IdentityCertificate c;
  rng.fill(c.body.serial);
  c.body.subject = std::move(subject);
  c.body.issuer_id = std::move(issuer_id);
  c.body.not_before = clock.now_seconds();
  c.body.not_after = c.body.not_before + validity_seconds;
  c.body.roles = canonical_roles(std::move(roles));
  c.body.subject_public_key = std::move(subject_key);
  Bytes tbs;
  try {
    tbs = encode_tbs(c.body);
  } catch (const Error& e) {
    throw Error(Errc::kParameter, e.what());
  }
  c.issuer_signature = crypto::sign(issuer_key, tbs);
  return c;
}

VerifiedIdentity validate(const IdentityCertificate& cert, const TrustStore& trust,
                          const Clock& clock) {
  const crypto::PublicKey* issuer = trust.find(cert.body.issuer_id);
  if (issuer == nullptr) {
    throw Error(Errc::kUnknownIssuer, fmt::format("unknown issuer '{}'", cert.body.issuer_id));
  }
  Bytes tbs;
  try {
    tbs = encode_tbs(cert.body);
  } catch (const Error&) {
    throw Error(Errc::kMalformed, "certificate body violates invariants");
  }
  if (!crypto::verify(*issuer, tbs, cert.issuer_signature)) {
    throw Error(Errc::kBadSignature, "issuer signature does not verify");
  }
  const std::int64_t now = clock.now_seconds();
  if (now < cert.body.not_before) throw Error(Errc::kNotYetValid, "certificate not yet valid");
  if (now > cert.body.not_after) throw Error(Errc::kExpired, "certificate expired");
  VerifiedIdentity v;
  v.subject = cert.body.subject;
  v.roles = canonical_roles(cert.body.roles);
  v.subject_public_key = cert.body.subject_public_key;
  v.issuer_id = cert.body.issuer_id;
  v.serial = cert.body.serial;
  v.not_after = cert.body.not_after;
  return v;
}

VerifiedIdentity validate(ByteView encoded, const TrustStore& trust, const Clock& clock) {
  return validate(decode(encoded), trust, clock);
}

// ---- envelopes ------------------------------------------------------------

std::string armor(std::string_view label, ByteView der) {
  std::string b64 = base64_encode(der);
  std::string out = fmt::format("-----BEGIN {}-----\n", label);
  for (std::size_t i = 0; i < b64.size(); i += 64) {
    out += b64.substr(i, 64);
    out += '\n';
  }
  out += fmt::format("-----END {}-----\n", label);
  return out;
}

Bytes dearmor(std::string_view label, std::string_view text) {
  const std::string begin = fmt::format("-----BEGIN {}-----", label);
  const std::string end = fmt::format("-----END {}-----", label);
  std::size_t b = text.find(begin);
  if (b == std::string_view::npos) throw Error(Errc::kMalformed, fmt::format("no {} block", label));
  std::size_t body_start = b + begin.size();
  std::size_t e = text.find(end, body_start);
  if (e == std::string_view::npos) throw Error(Errc::kMalformed, fmt::format("unterminated {} block", label));
  std::string b64;
  for (char c : text.substr(body_start, e - body_start)) {
    if (c == '\n' || c == '\r' || c == ' ' || c == '\t') continue;
    b64.push_back(c);
  }
  return base64_decode(b64);
}

std::string encode_anchor(const TrustAnchor& anchor) {
  tlv::Writer w;
  w.put_string(kAnchorIssuer, anchor.issuer_id).put(kAnchorKey, anchor.key.encoded());
  return armor(kTrustAnchorLabel, w.bytes());
}

TrustAnchor decode_anchor(std::string_view text) {
  Bytes raw = dearmor(kTrustAnchorLabel, text);
  tlv::Reader r(raw);
  TrustAnchor a;
  a.issuer_id = r.expect_string(kAnchorIssuer, kMaxIssuerId);
  a.key = crypto::PublicKey::decode(r.expect(kAnchorKey));
  r.finish();
  if (a.issuer_id.empty()) throw Error(Errc::kMalformed, "empty issuer id in trust anchor");
  return a;
}

}  // namespace sso::cert
