#include "sso/keyfile.hpp"

#include <fmt/format.h>

#include "sso/io.hpp"

namespace sso {

namespace fs = std::filesystem;

namespace {

template <class F>
auto config_errors(const fs::path& path, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(Errc::kConfig, e.code(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace

crypto::KeyPair load_key_file(const fs::path& path) {
  return config_errors(path, [&] {
    crypto::SecretKey sk =
        crypto::SecretKey::decode(cert::dearmor(cert::kSecretKeyLabel, io::read_file(path)));
    return crypto::KeyPair{sk.public_key(), sk};
  });
}

void save_key_file(const fs::path& path, const crypto::SecretKey& sk) {
  Bytes enc = sk.encode();
  std::string text = cert::armor(cert::kSecretKeyLabel, enc);
  secure_wipe(enc);
  io::write_file(path, text, true);
  secure_wipe(text);
}

Bytes load_certificate_file(const fs::path& path) {
  return config_errors(path, [&] {
    Bytes der = cert::dearmor(cert::kCertificateLabel, io::read_file(path));
    cert::decode(der);
    return der;
  });
}

void save_certificate_file(const fs::path& path, ByteView certificate) {
  io::write_file(path, cert::armor(cert::kCertificateLabel, certificate));
}

cert::TrustAnchor load_anchor_file(const fs::path& path) {
  return config_errors(path, [&] { return cert::decode_anchor(io::read_file(path)); });
}

void save_anchor_file(const fs::path& path, const cert::TrustAnchor& anchor) {
  io::write_file(path, cert::encode_anchor(anchor));
}

}  // namespace sso
