#include "sso/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <latch>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "sso/client.hpp"
#include "sso/home_server.hpp"

namespace sso::bench {

namespace {

std::int64_t steady_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

double nearest_rank(const std::vector<double>& sorted, double p) {
  std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size())));
  return sorted[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace

Summary summarize(std::vector<double> values) {
  if (values.empty()) throw Error(Errc::kParameter, "no samples to summarize");
  std::sort(values.begin(), values.end());
  Summary s;
  s.count = values.size();
  double total = 0;
  for (double v : values) total += v;
  s.mean = total / static_cast<double>(values.size());
  s.median = nearest_rank(values, 0.5);
  s.p95 = nearest_rank(values, 0.95);
  return s;
}

std::vector<KeygenRow> bench_keygen(int bits, int iterations, Rng& rng) {
  if (iterations < 1) throw Error(Errc::kParameter, "iterations must be at least 1");
  if (bits != 1024 && bits != 2048) throw Error(Errc::kParameter, "bits must be 1024 or 2048");
  std::vector<KeygenRow> rows;
  for (int i = 1; i <= iterations; ++i) {
    std::int64_t t0 = steady_us();
    crypto::KeyPair kp = crypto::gen_keypair(bits, rng);
    rows.push_back({i, std::max<std::int64_t>(1, steady_us() - t0)});
  }
  return rows;
}

std::string keygen_csv(const std::vector<KeygenRow>& rows) {
  std::string out = "iteration,micros\n";
  for (const auto& r : rows) out += fmt::format("{},{}\n", r.iteration, r.micros);
  return out;
}

std::vector<IssuanceRow> bench_issuance(const IssuanceOptions& options,
                                        const std::function<void(const IssuanceRow&)>& progress) {
  if (options.levels.empty()) throw Error(Errc::kParameter, "no concurrency levels");
  for (int l : options.levels) {
    if (l < 1) throw Error(Errc::kParameter, fmt::format("bad concurrency level {}", l));
  }
  if (options.requests_per_level < 0) throw Error(Errc::kParameter, "negative request count");
  if (options.requests_per_level == 0) return {};

  const int max_level = *std::max_element(options.levels.begin(), options.levels.end());
  Rng rng = Rng::from_entropy();
  auto users = std::make_shared<home::UserDirectory>();
  for (int i = 0; i < max_level; ++i) {
    users->add_user(fmt::format("bench{}", i), fmt::format("bench-password-{}", i), {}, {}, rng);
  }
  crypto::KeyPair home_keys = crypto::gen_keypair(options.server_key_bits, rng);

  home::HomeServerConfig cfg;
  cfg.key_bits = options.key_bits;
  cfg.keypool_size = options.keypool ? static_cast<std::size_t>(max_level) : 0;
  cfg.max_concurrent = static_cast<std::size_t>(max_level) * 2 + 8;
  cfg.handshake_timeout_ms = 120'000;
  home::HomeServer server(cfg, users, home_keys);
  server.start();
  // The pool is filled between rounds, never while a round is measured.
  server.key_pool()->stop_background();

  const cert::TrustAnchor anchor{cfg.issuer_id, home_keys.pub};
  const net::Endpoint ep{"127.0.0.1", server.port()};
  client::ClientOptions copts;
  copts.protocol.retry_base_ms = 20'000;
  copts.protocol.max_retries = 2;
  copts.connect_retries = 2;

  std::vector<IssuanceRow> rows;
  for (int level : options.levels) {
    std::vector<double> latencies;
    std::size_t failures = 0;
    std::int64_t keygen_us = 0, issuance_us = 0;
    for (int round = 0; round < options.requests_per_level; ++round) {
      while (server.key_pool()->refill_once()) {
      }
      home::HomeCounters before = server.counters();
      std::mutex mu;
      std::latch go(level + 1);
      std::vector<std::thread> clients;
      for (int i = 0; i < level; ++i) {
        clients.emplace_back([&, i, seed = rng.next_u64()] {
          Rng crng = Rng::from_seed(seed);
          SystemClock clock;
          go.arrive_and_wait();
          std::int64_t t0 = steady_us();
          try {
            client::enroll(ep, fmt::format("bench{}", i), fmt::format("bench-password-{}", i), anchor,
                           copts, crng, clock);
            double ms = static_cast<double>(steady_us() - t0) / 1000.0;
            std::lock_guard lock(mu);
            latencies.push_back(ms);
          } catch (const Error&) {
            std::lock_guard lock(mu);
            ++failures;
          }
        });
      }
      go.arrive_and_wait();
      for (auto& t : clients) t.join();
      home::HomeCounters after = server.counters();
      keygen_us += after.keygen_us_total - before.keygen_us_total;
      issuance_us += after.issuance_us_total - before.issuance_us_total;
    }
    IssuanceRow row;
    row.concurrency = level;
    row.failures = failures;
    row.samples = latencies.size();
    if (!latencies.empty()) {
      Summary s = summarize(latencies);
      row.mean_ms = s.mean;
      row.p95_ms = s.p95;
    }
    row.keygen_share = issuance_us > 0 ? static_cast<double>(keygen_us) / static_cast<double>(issuance_us) : 0.0;
    rows.push_back(row);
    if (progress) progress(row);
  }
  server.stop();
  return rows;
}

std::string issuance_csv(const std::vector<IssuanceRow>& rows) {
  std::string out = "concurrency,mean-ms,p95-ms,keygen-share\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{:.3f},{:.3f},{:.4f}\n", r.concurrency, r.mean_ms, r.p95_ms,
                       r.keygen_share);
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) {
      cell.remove_suffix(1);
    }
    cells.emplace_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

bool is_number(const std::string& s) {
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size();
}

}  // namespace

std::string emit_plotdata(std::string_view csv) {
  std::vector<std::string_view> lines;
  while (!csv.empty()) {
    auto nl = csv.find('\n');
    std::string_view line = csv.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    csv = nl == std::string_view::npos ? std::string_view{} : csv.substr(nl + 1);
  }
  if (lines.empty()) return "#\n";
  std::vector<std::string> header = split_csv_line(lines[0]);
  std::string out = "#";
  for (const auto& h : header) {
    if (h.empty()) throw Error(Errc::kMalformed, "row 0 (header): empty column name");
    out += " " + h;
  }
  out += "\n";
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string> cells = split_csv_line(lines[i]);
    if (cells.size() != header.size()) {
      throw Error(Errc::kMalformed, fmt::format("row {}: {} columns, header has {}", i,
                                                cells.size(), header.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!is_number(cells[c])) {
        throw Error(Errc::kMalformed,
                    fmt::format("row {}: column '{}' is not numeric: '{}'", i, header[c], cells[c]));
      }
      out += (c ? " " : "") + cells[c];
    }
    out += "\n";
  }
  return out;
}

}  // namespace sso::bench
