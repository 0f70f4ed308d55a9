#include <ctime>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cli_support.hpp"
#include "sso/client.hpp"

using namespace sso;
using namespace sso::client;

namespace {

struct Common {
  std::filesystem::path cache = "sso.cred";
  std::filesystem::path anchor = "home.anchor";
  std::string suite = "modern";
  int timeout_ms = 10'000;
  int connect_retries = 3;

  ClientOptions options() const {
    ClientOptions o;
    auto s = wire::suite_from_name(suite);
    if (!s) throw Error(Errc::kParameter, fmt::format("unknown suite '{}'", suite));
    o.protocol.suite = *s;
    o.protocol.handshake_timeout_ms = timeout_ms;
    o.connect_retries = connect_retries;
    return o;
  }
};

std::string utc(std::int64_t seconds) {
  std::time_t t = static_cast<std::time_t>(seconds);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int fail(const Error& e) {
  std::cerr << "sso: " << e.what() << "\n";
  return exit_code_for(e.code());
}

// Prompts once, runs Phase 1 and replaces the cache on success only.
void signon(const Common& c, const std::string& home, const std::string& user) {
  net::Endpoint ep = net::parse_endpoint(home);
  cert::TrustAnchor anchor = load_anchor_file(c.anchor);
  ClientOptions opts = c.options();
  std::optional<std::string> pw = cli::read_password("Password: ");
  if (!pw) throw Error(Errc::kParameter, "no password given");
  Rng rng = Rng::from_entropy();
  SystemClock clock;
  protocol::EnrollmentResult r = enroll(ep, user, std::move(*pw), anchor, opts, rng, clock);
  save_cache(c.cache, r.certificate_bytes, r.keys.sec);
  std::cerr << fmt::format("sso: signed on as {}, valid until {}\n",
                           r.certificate.body.subject.username,
                           utc(r.certificate.body.not_after));
}

int cmd_signon(const Common& c, const std::string& home, const std::string& user) {
  try {
    signon(c, home, user);
    return kExitOk;
  } catch (const Error& e) {
    if (e.code() == Errc::kAuthentication) {
      std::cerr << "sso: sign-on refused by the home server\n";
      return kExitAuthFailed;
    }
    return fail(e);
  }
}

int access_once(const Common& c, const std::string& server, const std::string& resource_name,
                const std::string& body) {
  net::Endpoint ep = net::parse_endpoint(server);
  cert::TrustAnchor anchor = load_anchor_file(c.anchor);
  cert::TrustStore trust;
  trust.add(anchor.issuer_id, anchor.key);
  CachedCredentials creds = load_cache(c.cache);
  SystemClock clock;
  Session s = open_session(ep, creds, trust, c.options(), Rng::from_entropy(), clock);
  resource::AppResponse resp = s.request({resource_name, Bytes(body.begin(), body.end())});
  s.close();
  if (resp.status != resource::Status::kOk) {
    std::cerr << fmt::format("sso: access to '{}' denied: {}\n", resource_name,
                             resource::to_string(resp.status));
    return kExitDenied;
  }
  std::cout.write(reinterpret_cast<const char*>(resp.body.data()),
                  static_cast<std::streamsize>(resp.body.size()));
  std::cout << "\n";
  return kExitOk;
}

int cmd_access(const Common& c, const std::string& server, const std::string& resource_name,
               const std::string& body, bool auto_renew, const std::string& home,
               std::string user) {
  try {
    return access_once(c, server, resource_name, body);
  } catch (const Error& e) {
    if (e.code() != Errc::kReenrollNeeded) return fail(e);
    if (!auto_renew || home.empty()) {
      std::cerr << "sso: cached credentials have expired; run `sso signon` again\n";
      return kExitReenroll;
    }
  }
  try {
    if (user.empty()) user = load_cache(c.cache).decoded.body.subject.username;
    std::cerr << "sso: cached credentials have expired; signing on again\n";
    signon(c, home, user);
    return access_once(c, server, resource_name, body);
  } catch (const Error& e) {
    return fail(e);
  }
}

int cmd_inspect(const Common& c) {
  try {
    CachedCredentials creds = load_cache(c.cache);
    const cert::CertificateBody& b = creds.decoded.body;
    std::cout << "subject:      " << b.subject.username << "\n";
    if (!b.subject.location.empty()) std::cout << "location:     " << b.subject.location << "\n";
    if (!b.subject.organization.empty()) {
      std::cout << "organization: " << b.subject.organization << "\n";
    }
    if (!b.subject.email.empty()) std::cout << "email:        " << b.subject.email << "\n";
    std::cout << "issuer:       " << b.issuer_id << "\n";
    std::cout << "serial:       " << to_hex(b.serial) << "\n";
    std::cout << "not-before:   " << utc(b.not_before) << "\n";
    std::cout << "not-after:    " << utc(b.not_after) << "\n";
    std::cout << "roles:        " << cert::join_roles(cert::canonical_roles(b.roles)) << "\n";
    std::cout << "key-bits:     " << b.subject_public_key.bits() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "sso: " << e.what() << "\n";
    return kExitUsage;
  }
}

void add_common(CLI::App* cmd, Common& c, bool network) {
  cmd->add_option("--cache", c.cache, "Credential cache file")->capture_default_str();
  if (!network) return;
  cmd->add_option("--anchor", c.anchor, "Home server trust anchor")->capture_default_str();
  cmd->add_option("--suite", c.suite, "modern or legacy-3des")->capture_default_str();
  cmd->add_option("--timeout-ms", c.timeout_ms, "Handshake timeout")->capture_default_str();
  cmd->add_option("--connect-retries", c.connect_retries)->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single sign-on client"};
  app.footer(
      "Exit codes: 0 ok, 2 usage or bad files, 4 authentication failed, 5 network,\n"
      "6 credentials expired (sign on again), 7 access denied.");
  app.require_subcommand(1);
  Common common;

  std::string home, user;
  auto* signon_cmd = app.add_subcommand("signon", "Enroll with the home server (prompts once)");
  signon_cmd->add_option("--home", home, "host:port")->required();
  signon_cmd->add_option("--user", user)->required();
  add_common(signon_cmd, common, true);

  std::string server, resource_name, body;
  bool auto_renew = false;
  auto* access_cmd = app.add_subcommand("access", "Log in to a resource server and send a request");
  access_cmd->add_option("--server", server, "host:port")->required();
  access_cmd->add_option("--resource", resource_name)->required();
  access_cmd->add_option("--body", body, "Request body");
  access_cmd->add_flag("--auto-renew", auto_renew, "Sign on again when the cache has expired");
  access_cmd->add_option("--home", home, "host:port, needed by --auto-renew");
  access_cmd->add_option("--user", user, "Defaults to the cached subject");
  add_common(access_cmd, common, true);

  auto* inspect_cmd = app.add_subcommand("inspect", "Show the cached certificate");
  add_common(inspect_cmd, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  if (*signon_cmd) return cmd_signon(common, home, user);
  if (*access_cmd) {
    return cmd_access(common, server, resource_name, body, auto_renew, home, user);
  }
  return cmd_inspect(common);
}
