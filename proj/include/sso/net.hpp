#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "sso/wire.hpp"

// Blocking TCP with poll-based timeouts. IPv4 only.
namespace sso::net {

class Socket final : public wire::ByteStream {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.fd_), read_timeout_ms_(o.read_timeout_ms_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() override { close(); }

  // Throws Error(kNetwork) on refusal or timeout.
  static Socket connect(const std::string& host, std::uint16_t port, int timeout_ms = 5000);

  // Negative means wait forever. read_some throws Error(kTimeout) when it
  // expires and Error(kNetwork) on a reset.
  void set_read_timeout_ms(int ms) { read_timeout_ms_ = ms; }
  std::size_t read_some(std::span<std::uint8_t> out) override;
  void write_all(ByteView data) override;
  void shutdown_write();
  void close();
  bool is_open() const { return fd_ >= 0; }
  int fd() const { return fd_; }

 private:
  int fd_ = -1;
  int read_timeout_ms_ = -1;
};

class Listener {
 public:
  // Port 0 picks a free port. Throws Error(kNetwork) if the bind fails.
  Listener(const std::string& host, std::uint16_t port, int backlog = 128);
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;
  ~Listener();

  std::uint16_t port() const { return port_; }
  // nullopt on timeout.
  std::optional<Socket> accept(int timeout_ms);
  void close();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};
// "host:port"; throws Error(kParameter).
Endpoint parse_endpoint(std::string_view text);

}  // namespace sso::net
