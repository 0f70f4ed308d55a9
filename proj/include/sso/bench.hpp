#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "sso/error.hpp"
#include "sso/rng.hpp"

// Keypair-generation and issuance-latency benchmarks. Issuance runs a real
// home server on loopback and drives it with concurrent clients.
namespace sso::bench {

struct Summary {
  std::size_t count = 0;
  double mean = 0;
  double median = 0;
  double p95 = 0;
};

// Nearest-rank percentiles. Throws Error(kParameter) for an empty input.
Summary summarize(std::vector<double> values);

struct KeygenRow {
  int iteration = 0;  // 1-based
  std::int64_t micros = 0;
};

// Throws Error(kParameter) unless iterations >= 1 and bits is 1024 or 2048.
std::vector<KeygenRow> bench_keygen(int bits, int iterations, Rng& rng);
// Header "iteration,micros".
std::string keygen_csv(const std::vector<KeygenRow>& rows);

struct IssuanceOptions {
  std::vector<int> levels{1, 2, 4, 8, 16, 32};
  // Rounds per level; each round starts `level` clients at once and every
  // client enrolls once.
  int requests_per_level = 3;
  bool keypool = false;
  int key_bits = 2048;
  int server_key_bits = 2048;
};

struct IssuanceRow {
  int concurrency = 0;
  double mean_ms = 0;  // client-observed enrollment latency
  double p95_ms = 0;
  double keygen_share = 0;  // server keygen time / server issuance time
  std::size_t samples = 0;
  std::size_t failures = 0;
};

// Throws Error(kParameter) for an empty or non-positive level list or a
// negative request count. requests_per_level == 0 returns no rows.
std::vector<IssuanceRow> bench_issuance(const IssuanceOptions& options,
                                        const std::function<void(const IssuanceRow&)>& progress = {});
// Header "concurrency,mean-ms,p95-ms,keygen-share".
std::string issuance_csv(const std::vector<IssuanceRow>& rows);

// CSV with a header row to gnuplot data: a '#' comment line naming the
// columns, then whitespace-separated numeric rows. Throws Error(kMalformed)
// naming the 1-based row for a non-numeric cell or a wrong column count.
std::string emit_plotdata(std::string_view csv);

}  // namespace sso::bench
