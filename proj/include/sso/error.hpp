#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sso {

// Every failure the library reports carries one of these codes. Callers
// branch on the code, never on the message text.
enum class Errc {
  // crypto
  kEntropy,
  kParameter,
  kDecryption,
  kAuthentication,
  // encoding
  kMalformed,
  kEncoding,
  // certificate validation
  kUnknownIssuer,
  kBadSignature,
  kExpired,
  kNotYetValid,
  // framing
  kBadMagic,
  kUnknownVersion,
  kUnknownType,
  kLengthMismatch,
  kOversize,
  kTruncated,
  // protocol
  kProtocolOrder,
  kFreshnessMismatch,
  kReplayDetected,
  kBadPassword,
  kUnknownUser,
  kAtCapacity,
  kNonceMismatch,
  kKeyMismatch,
  kServerUntrusted,
  kCertInvalid,
  kBadChallengeSignature,
  kReenrollNeeded,
  kGiveUp,
  kTimeout,
  // daemons and storage
  kDuplicateUsername,
  kIo,
  kConfig,
  kNetwork,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  Error(Errc code, Errc cause, const std::string& what)
      : std::runtime_error(what), code_(code), cause_(cause) {}

  Errc code() const noexcept { return code_; }
  // Sub-reason, e.g. kCertInvalid caused by kExpired.
  std::optional<Errc> cause() const noexcept { return cause_; }

 private:
  Errc code_;
  std::optional<Errc> cause_;
};

}  // namespace sso
