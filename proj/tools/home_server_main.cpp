#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cli_support.hpp"
#include "sso/home_server.hpp"

using namespace sso;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitBind = 3;

int cmd_serve(const std::filesystem::path& config_path, const std::filesystem::path& port_file) {
  sigset_t signals = cli::block_shutdown_signals();
  home::HomeServerConfig cfg;
  std::shared_ptr<home::UserDirectory> users;
  crypto::KeyPair keys;
  std::unique_ptr<cli::LogSink> log;
  try {
    cfg = home::HomeServerConfig::load(config_path);
    users = std::shared_ptr<home::UserDirectory>(
        std::filesystem::exists(cfg.user_db) ? home::UserDirectory::load(cfg.user_db)
                                             : std::make_unique<home::UserDirectory>());
    keys = load_key_file(cfg.server_key);
    log = std::make_unique<cli::LogSink>(cfg.log);
  } catch (const Error& e) {
    std::cerr << "home-server: " << e.what() << "\n";
    return kExitConfig;
  }

  home::HomeServer server(cfg, users, keys, &log->logger);
  try {
    server.start();
  } catch (const Error& e) {
    std::cerr << "home-server: cannot listen on " << cfg.bind << ":" << cfg.port << ": "
              << e.what() << "\n";
    return kExitBind;
  }
  cli::write_port_file(port_file, server.port());
  std::cerr << fmt::format("home-server: listening on {}:{} ({} users)\n", cfg.bind,
                           server.port(), users->size());
  cli::wait_for_shutdown(signals);
  server.stop();
  home::HomeCounters c = server.counters();
  std::cerr << fmt::format("home-server: stopped, {} enrolled, {} refused\n", c.completed,
                           c.refused);
  return 0;
}

int cmd_useradd(const std::filesystem::path& db, const std::string& name, const std::string& roles,
                const cert::SubjectInfo& subject) {
  try {
    std::unique_ptr<home::UserDirectory> dir = std::filesystem::exists(db)
                                                   ? home::UserDirectory::load(db)
                                                   : std::make_unique<home::UserDirectory>();
    std::vector<cert::Role> parsed = cert::parse_roles(roles);
    std::optional<std::string> pw = cli::read_password(fmt::format("New password for {}: ", name));
    if (!pw) throw Error(Errc::kParameter, "no password given");
    Rng rng = Rng::from_entropy();
    dir->add_user(name, *pw, parsed, subject, rng);
    secure_wipe(*pw);
    dir->save(db);
    std::cerr << fmt::format("added {} with roles [{}]\n", name, cert::join_roles(
                                                                      dir->find(name)->roles));
    return 0;
  } catch (const Error& e) {
    std::cerr << "home-server: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_keygen(int bits, const std::filesystem::path& out, const std::filesystem::path& anchor_out,
               const std::string& issuer) {
  try {
    Rng rng = Rng::from_entropy();
    crypto::KeyPair kp = crypto::gen_keypair(bits, rng);
    save_key_file(out, kp.sec);
    if (!anchor_out.empty()) save_anchor_file(anchor_out, {issuer, kp.pub});
    return 0;
  } catch (const Error& e) {
    std::cerr << "home-server: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_certify(const std::filesystem::path& issuer_key, const std::string& issuer,
                const std::filesystem::path& subject_key, const std::string& subject,
                std::int64_t validity, const std::string& roles, const std::filesystem::path& out) {
  try {
    crypto::KeyPair home = load_key_file(issuer_key);
    crypto::KeyPair server = load_key_file(subject_key);
    Rng rng = Rng::from_entropy();
    SystemClock clock;
    cert::IdentityCertificate c =
        cert::issue(home.sec, issuer, {subject, "", "", ""}, cert::parse_roles(roles), server.pub,
                    validity, clock, rng);
    save_certificate_file(out, cert::encode(c));
    return 0;
  } catch (const Error& e) {
    std::cerr << "home-server: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Home server: user directory, enrollment and certificate issuance"};
  app.require_subcommand(1);

  std::filesystem::path config, port_file;
  auto* serve = app.add_subcommand("serve", "Run the enrollment daemon");
  serve->add_option("--config", config, "key=value config file")->required();
  serve->add_option("--port-file", port_file, "Write the bound port here once listening");

  std::string name, roles, email, location, org;
  std::filesystem::path db = "users.db";
  auto* useradd = app.add_subcommand("useradd", "Add a user; the password is read from stdin");
  useradd->add_option("name", name)->required();
  useradd->add_option("--roles", roles, "Comma-separated roles");
  useradd->add_option("--email", email);
  useradd->add_option("--location", location);
  useradd->add_option("--org", org);
  useradd->add_option("--db", db, "User database file")->capture_default_str();

  int bits = 2048;
  std::filesystem::path out, anchor_out;
  std::string issuer = "home";
  auto* keygen = app.add_subcommand("keygen", "Generate an RSA keypair file");
  keygen->add_option("--bits", bits)->check(CLI::IsMember({1024, 2048}))->capture_default_str();
  keygen->add_option("--out", out)->required();
  keygen->add_option("--anchor-out", anchor_out, "Also write a trust anchor for this key");
  keygen->add_option("--issuer", issuer, "Issuer id for the anchor")->capture_default_str();

  std::filesystem::path issuer_key, subject_key, cert_out;
  std::string subject, cert_roles;
  std::int64_t validity = 365LL * 24 * 3600;
  auto* certify = app.add_subcommand("certify-server", "Issue a certificate for a resource server");
  certify->add_option("--key", issuer_key, "Home server key file")->required();
  certify->add_option("--issuer", issuer)->capture_default_str();
  certify->add_option("--server-key", subject_key, "Resource server key file")->required();
  certify->add_option("--subject", subject, "Resource server name")->required();
  certify->add_option("--roles", cert_roles);
  certify->add_option("--validity", validity, "Seconds")->capture_default_str();
  certify->add_option("--out", cert_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (*serve) return cmd_serve(config, port_file);
  if (*useradd) return cmd_useradd(db, name, roles, {"", location, org, email});
  if (*keygen) return cmd_keygen(bits, out, anchor_out, issuer);
  return cmd_certify(issuer_key, issuer, subject_key, subject, validity, cert_roles, cert_out);
}
