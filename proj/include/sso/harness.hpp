#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sso/protocol.hpp"
#include "sso/resource_server.hpp"

// Deterministic in-memory network simulator with an active adversary. One
// event loop over a time-ordered queue drives the transport-free state
// machines against a simulated clock; a run is fully determined by its
// scenario and seed.
namespace sso::sim {

// ---- network and adversary --------------------------------------------------

struct NetConfig {
  double loss = 0.0;       // per transmission
  double duplicate = 0.0;  // per delivered transmission
  std::int64_t delay_min_ms = 5;
  std::int64_t delay_max_ms = 5;
  // Extra uniform jitter in [0, reorder_ms]; frames sent close together
  // may overtake each other.
  std::int64_t reorder_ms = 0;

  // Throws Error(kParameter) for probabilities outside [0,1] or a bad range.
  void validate() const;
};

// Matches frames sent by honest parties by message type. occurrence 0
// matches every frame of the type, n > 0 only the n-th.
struct MsgPattern {
  std::optional<wire::MsgType> type;  // nullopt: any type
  int occurrence = 0;

  // "M3", "R2#1", "APP", "*". Throws Error(kParameter).
  static MsgPattern parse(std::string_view text);
  std::string to_string() const;
};

enum class ReplayMode {
  kSameConnection,  // inject into the original connection
  kNewConnection,   // open a connection, send the recorded opener, then the frame
};

enum class ForgeKind {
  kRogueIssuer,     // same body, signed by a key the servers do not trust
  kAlteredRoles,    // roles changed, original signature kept
  kAlteredSubject,  // username changed, original signature kept
  kOtherParty,      // a genuine certificate belonging to someone else
};

struct Record {
  MsgPattern pattern;
};
struct Replay {
  std::size_t index = 0;  // into the recordings, in capture order
  std::int64_t at_ms = 0;
  ReplayMode mode = ReplayMode::kSameConnection;
};
struct Tamper {
  MsgPattern pattern;
  std::size_t offset = 0;  // into the whole frame
  std::uint8_t mask = 0x01;
};
struct SubstituteCert {
  MsgPattern pattern;
  ForgeKind kind = ForgeKind::kRogueIssuer;
};
struct Drop {
  MsgPattern pattern;
};
using AdversaryAction = std::variant<Record, Replay, Tamper, SubstituteCert, Drop>;

struct AdversaryScript {
  std::vector<AdversaryAction> actions;
  // Throws Error(kParameter) if a replay names a recording no earlier
  // record action can produce.
  void validate() const;
};

// ---- scenario ------------------------------------------------------------------

struct UserSpec {
  std::string name;
  std::string password;
  std::vector<cert::Role> roles;
};

struct AccessIntent {
  int server = 1;  // 1-based resource server index
  std::string resource;
  std::string body;
};

struct ClientSpec {
  std::string user;
  std::string password;  // what the client types
  std::int64_t start_ms = 0;
  std::vector<AccessIntent> accesses;
};

struct Scenario {
  NetConfig net;
  AdversaryScript adversary;
  protocol::ProtocolConfig protocol;
  int resource_servers = 1;
  std::vector<UserSpec> users;
  std::vector<ClientSpec> clients;
  std::vector<resource::ResourceRule> rules;
  int key_bits = 1024;
  std::int64_t cert_validity_seconds = 3600;
  std::size_t home_max_concurrent = 64;
  std::size_t resource_max_concurrent = 64;
  std::int64_t max_time_ms = 120'000;
  std::int64_t start_unix_ms = 1'700'000'000'000;
  std::optional<std::uint64_t> seed;  // default seed when the caller has none

  // Throws Error(kParameter) for dangling references.
  void validate() const;

  // Line format, '#' comments:
  //   loss P | duplicate P | delay MIN MAX | reorder MS | max-time MS
  //   suite NAME | timeout MS | retries N | retry-base MS | key-bits N
  //   validity S | resources K | home-max N | resource-max N | seed N
  //   rule RESOURCE ROLE
  //   user NAME PASSWORD ROLES|-
  //   client USER PASSWORD [start=MS] [access=SERVER:RESOURCE:BODY]...
  //   record PATTERN
  //   replay INDEX at MS [new|same]
  //   tamper PATTERN OFFSET [MASK]
  //   substitute-cert PATTERN rogue-issuer|altered-roles|altered-subject|other-party
  //   drop PATTERN
  // Throws Error(kConfig) naming the line.
  static Scenario parse(std::string_view text);
  static Scenario load(const std::filesystem::path& path);
};

// One user, one resource server with rules wiki=staff and payroll=admin,
// one client that enrolls and reads "wiki" once. Lossless, no adversary.
Scenario happy_path_scenario();

// ---- transcript ------------------------------------------------------------------

enum class Fate { kDelivered, kDropped, kDuplicated, kTampered, kInjected };
std::string_view to_string(Fate f);

struct TranscriptEntry {
  std::int64_t time_ms = 0;  // simulated, relative to the run start
  std::string sender;
  std::string receiver;
  std::uint64_t connection = 0;
  bool from_client = false;
  Bytes frame;  // as it went on the wire, after any tampering
  Fate fate = Fate::kDelivered;

  std::optional<wire::MsgType> type() const;
  friend bool operator==(const TranscriptEntry&, const TranscriptEntry&) = default;
};

struct Transcript {
  std::vector<TranscriptEntry> entries;

  // Handshake frames (M1..R4) that reached their receiver at least once.
  std::size_t protocol_frames_delivered() const;
  std::size_t count(wire::MsgType type) const;
  // Canonical byte form, for determinism checks.
  Bytes serialize() const;
  std::string to_text() const;
  friend bool operator==(const Transcript&, const Transcript&) = default;
};

// ---- outcomes ---------------------------------------------------------------------

enum class Outcome { kNotRun, kOk, kDenied, kFailed, kGaveUp, kClosed, kTimedOut };
std::string_view to_string(Outcome o);

struct AccessOutcome {
  AccessIntent intent;
  Outcome outcome = Outcome::kNotRun;
  std::optional<Errc> error;
  std::optional<resource::Status> status;
  Bytes response;
  crypto::SymKey session_key;  // client's copy
  std::string server_identity;
};

struct ClientReport {
  std::string name;
  Outcome enroll = Outcome::kNotRun;
  std::optional<Errc> enroll_error;
  std::optional<cert::IdentityCertificate> certificate;
  std::vector<AccessOutcome> accesses;
  std::size_t stale_ignored = 0;  // late duplicates dropped as out of order
};

struct IssuedCertificate {
  std::string username;
  std::vector<cert::Role> roles;
  cert::Serial serial{};
};

struct EstablishedSession {
  int server = 0;
  std::uint64_t connection = 0;
  std::string peer_username;
  std::vector<cert::Role> roles;
  crypto::SymKey session_key;  // server's copy
  crypto::Digest nonce_digest;
};

struct ServerReport {
  std::string name;
  std::size_t handshakes = 0;
  std::map<Errc, std::size_t> rejections;
  std::size_t resends = 0;
  std::size_t requests = 0;
};

// Everything a hygiene audit needs to know is secret.
struct Secrets {
  std::vector<std::string> passwords;
  std::vector<Bytes> symmetric_keys;  // reply keys and session keys
  std::vector<Bytes> secret_keys;     // encoded client secret keys
  std::vector<Bytes> bodies;          // request and response bodies
};

struct RunResult {
  std::uint64_t seed = 0;
  Transcript transcript;
  std::vector<ClientReport> clients;
  ServerReport home;
  std::vector<ServerReport> resources;
  std::vector<IssuedCertificate> issued;
  std::vector<EstablishedSession> sessions;
  Secrets secrets;
  std::vector<std::string> notes;  // adversary actions that could not apply
  std::int64_t end_ms = 0;
  bool hit_max_time = false;
};

// Throws only for an invalid scenario (Error(kParameter)); protocol
// failures are outcomes.
RunResult run_scenario(const Scenario& scenario, std::uint64_t seed);

// ---- transcript predicates -----------------------------------------------------------

enum class Predicate {
  kNoPlaintextPassword,
  kNoPlaintextSessionKey,
  kNoPlaintextSecretKey,
  kNoPlaintextBodies,
  kSingleSessionPerNonce,
  kMessageCountBounds,
};
std::string_view to_string(Predicate p);
std::vector<Predicate> all_predicates();

struct PredicateResult {
  Predicate predicate;
  bool pass = false;
  std::string detail;
};

std::vector<PredicateResult> assert_transcript(const RunResult& run,
                                               const std::vector<Predicate>& predicates,
                                               const protocol::ProtocolConfig& protocol);
// "PASS name" / "FAIL name: detail", one per line.
std::string format_report(const std::vector<PredicateResult>& results);

// ---- tamper support ---------------------------------------------------------------

// Byte offsets worth mutating in one frame: every header byte, the tag and
// length bytes of every TLV field (recursing into nested TLV values), the
// first and last byte of each value, and `samples_per_field` positions
// drawn from `rng` inside each longer value.
std::vector<std::size_t> mutation_offsets(ByteView frame, std::size_t samples_per_field, Rng& rng);

// Deterministic keypairs shared by every run in the process.
const crypto::KeyPair& bank_keypair(int bits, std::uint64_t index);

}  // namespace sso::sim
