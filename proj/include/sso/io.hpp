#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// File helpers, key=value configuration and the structured log sink shared
// by the daemons and tools.
namespace sso::io {

// Throws Error(kIo).
std::string read_file(const std::filesystem::path& path);
// Writes via a temporary file and rename. `private_mode` gives 0600.
void write_file(const std::filesystem::path& path, std::string_view content,
                bool private_mode = false);

// `key = value` lines; '#' starts a comment; blank lines ignored.
class KeyValueConfig {
 public:
  // Throws Error(kConfig) naming the line for syntax errors and duplicates.
  static KeyValueConfig parse(std::string_view text, std::string_view source = "config");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(std::string_view key) const;
  std::string get(std::string_view key, std::string fallback) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  // Throws Error(kConfig) if any key is outside `known`.
  void check_known(const std::vector<std::string_view>& known) const;
  // Relative paths resolve against the directory holding the file.
  std::filesystem::path get_path(std::string_view key, std::filesystem::path fallback) const;

 private:
  struct Value {
    std::string text;
    int line = 0;
  };
  std::string source_;
  std::filesystem::path base_dir_;
  std::map<std::string, Value, std::less<>> values_;
};

// One line per event: `ts=<unix ms> event=<name> key=value ...`. Values with
// spaces are quoted. Thread-safe.
class Logger {
 public:
  explicit Logger(std::ostream* out = nullptr) : out_(out) {}
  void set_stream(std::ostream* out) {
    std::lock_guard lock(mu_);
    out_ = out;
  }
  void event(std::string_view name,
             std::initializer_list<std::pair<std::string_view, std::string>> fields);

 private:
  std::mutex mu_;
  std::ostream* out_;
};

}  // namespace sso::io
