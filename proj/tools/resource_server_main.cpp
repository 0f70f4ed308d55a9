#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cli_support.hpp"
#include "sso/resource_server.hpp"

using namespace sso;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitBind = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resource server: certificate login and role-checked request service"};
  app.require_subcommand(1);
  std::filesystem::path config, port_file;
  auto* serve = app.add_subcommand("serve", "Run the resource daemon");
  serve->add_option("--config", config, "key=value config file")->required();
  serve->add_option("--port-file", port_file, "Write the bound port here once listening");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  sigset_t signals = cli::block_shutdown_signals();
  resource::ResourceServerConfig cfg;
  std::unique_ptr<cli::LogSink> log;
  std::unique_ptr<resource::ResourceServer> server;
  try {
    cfg = resource::ResourceServerConfig::load(config);
    log = std::make_unique<cli::LogSink>(cfg.log);
    server = resource::make_resource_server(cfg, &log->logger);
  } catch (const Error& e) {
    std::cerr << "resource-server: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    server->start();
  } catch (const Error& e) {
    std::cerr << "resource-server: cannot listen on " << cfg.bind << ":" << cfg.port << ": "
              << e.what() << "\n";
    return kExitBind;
  }
  cli::write_port_file(port_file, server->port());
  std::cerr << fmt::format("resource-server: listening on {}:{}\n", cfg.bind, server->port());
  cli::wait_for_shutdown(signals);
  server->stop();
  resource::ResourceCounters c = server->counters();
  std::cerr << fmt::format("resource-server: stopped, {} sessions, {} requests\n", c.established,
                           c.requests);
  return 0;
}
