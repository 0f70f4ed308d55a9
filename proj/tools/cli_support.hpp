#pragma once

#include <signal.h>
#include <termios.h>
#include <unistd.h>

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "sso/error.hpp"
#include "sso/io.hpp"

namespace sso::cli {

// Prompt goes to stderr. Echo is turned off when stdin is a terminal.
inline std::optional<std::string> read_password(const std::string& prompt) {
  std::cerr << prompt << std::flush;
  const bool tty = isatty(STDIN_FILENO) != 0;
  termios saved{};
  if (tty && tcgetattr(STDIN_FILENO, &saved) == 0) {
    termios quiet = saved;
    quiet.c_lflag &= ~static_cast<tcflag_t>(ECHO);
    tcsetattr(STDIN_FILENO, TCSAFLUSH, &quiet);
  }
  std::string line;
  bool ok = static_cast<bool>(std::getline(std::cin, line));
  if (tty) {
    tcsetattr(STDIN_FILENO, TCSAFLUSH, &saved);
    std::cerr << "\n";
  }
  if (!ok) return std::nullopt;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

// Blocks SIGINT and SIGTERM in the calling thread. Call before starting any
// thread so they inherit the mask; then wait_for_shutdown() from main.
inline sigset_t block_shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

inline int wait_for_shutdown(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  return sig;
}

// Log file in append mode, or stderr when `path` is empty.
struct LogSink {
  std::unique_ptr<std::ofstream> file;
  io::Logger logger;

  explicit LogSink(const std::filesystem::path& path) {
    if (path.empty()) {
      logger.set_stream(&std::cerr);
      return;
    }
    file = std::make_unique<std::ofstream>(path, std::ios::app);
    if (!*file) throw Error(Errc::kConfig, "cannot open log file " + path.string());
    logger.set_stream(file.get());
  }
};

inline void write_port_file(const std::filesystem::path& path, std::uint16_t port) {
  if (!path.empty()) io::write_file(path, std::to_string(port) + "\n");
}

}  // namespace sso::cli
