#include "sso/io.hpp"

#include <sys/stat.h>

#include <charconv>
#include <chrono>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "sso/error.hpp"

namespace sso::io {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIo, fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view content, bool private_mode) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::kIo, fmt::format("cannot write {}", tmp.string()));
    if (private_mode) ::chmod(tmp.c_str(), 0600);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(Errc::kIo, fmt::format("short write to {}", tmp.string()));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(Errc::kIo, fmt::format("cannot replace {}: {}", path.string(), ec.message()));
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, std::string_view source) {
  KeyValueConfig cfg;
  cfg.source_ = std::string(source);
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::kConfig, fmt::format("{}:{}: expected key = value", source, line_no));
    }
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw Error(Errc::kConfig, fmt::format("{}:{}: empty key", source, line_no));
    if (cfg.values_.count(key) != 0) {
      throw Error(Errc::kConfig, fmt::format("{}:{}: duplicate key '{}'", source, line_no, key));
    }
    cfg.values_.emplace(std::move(key), Value{std::move(value), line_no});
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(Errc::kConfig, e.what());
  }
  KeyValueConfig cfg = parse(text, path.string());
  cfg.base_dir_ = path.parent_path();
  return cfg;
}

bool KeyValueConfig::has(std::string_view key) const { return values_.find(key) != values_.end(); }

std::string KeyValueConfig::get(std::string_view key, std::string fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second.text;
}

std::int64_t KeyValueConfig::get_int(std::string_view key, std::int64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& t = it->second.text;
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw Error(Errc::kConfig,
                fmt::format("{}:{}: '{}' is not an integer", source_, it->second.line, key));
  }
  return v;
}

double KeyValueConfig::get_double(std::string_view key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    double v = std::stod(it->second.text, &used);
    if (used == it->second.text.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(Errc::kConfig,
              fmt::format("{}:{}: '{}' is not a number", source_, it->second.line, key));
}

bool KeyValueConfig::get_bool(std::string_view key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& t = it->second.text;
  if (t == "true" || t == "yes" || t == "1" || t == "on") return true;
  if (t == "false" || t == "no" || t == "0" || t == "off") return false;
  throw Error(Errc::kConfig,
              fmt::format("{}:{}: '{}' is not a boolean", source_, it->second.line, key));
}

void KeyValueConfig::check_known(const std::vector<std::string_view>& known) const {
  for (const auto& [key, value] : values_) {
    bool ok = false;
    for (auto k : known) ok = ok || k == key;
    if (!ok) throw Error(Errc::kConfig, fmt::format("{}:{}: unknown key '{}'", source_, value.line, key));
  }
}

fs::path KeyValueConfig::get_path(std::string_view key, fs::path fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  fs::path p(it->second.text);
  if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
  return p;
}

void Logger::event(std::string_view name,
                   std::initializer_list<std::pair<std::string_view, std::string>> fields) {
  using namespace std::chrono;
  auto ms = duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  std::string line = fmt::format("ts={} event={}", ms, name);
  for (const auto& [k, v] : fields) {
    bool quote = v.empty() || v.find_first_of(" \t\"=") != std::string::npos;
    if (quote) {
      std::string esc;
      for (char c : v) {
        if (c == '"' || c == '\\') esc.push_back('\\');
        esc.push_back(c);
      }
      line += fmt::format(" {}=\"{}\"", k, esc);
    } else {
      line += fmt::format(" {}={}", k, v);
    }
  }
  line.push_back('\n');
  std::lock_guard lock(mu_);
  if (out_ != nullptr) {
    *out_ << line;
    out_->flush();
  }
}

}  // namespace sso::io
