#pragma once

#include <filesystem>

#include "sso/certificate.hpp"
#include "sso/crypto.hpp"

// Armored key, certificate and trust-anchor files. Loaders throw
// Error(kConfig) naming the path when a file is unreadable or invalid.
namespace sso {

crypto::KeyPair load_key_file(const std::filesystem::path& path);
// Mode 0600.
void save_key_file(const std::filesystem::path& path, const crypto::SecretKey& sk);

Bytes load_certificate_file(const std::filesystem::path& path);
void save_certificate_file(const std::filesystem::path& path, ByteView certificate);

cert::TrustAnchor load_anchor_file(const std::filesystem::path& path);
void save_anchor_file(const std::filesystem::path& path, const cert::TrustAnchor& anchor);

}  // namespace sso
