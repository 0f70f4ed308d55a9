#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "sso/bench.hpp"
#include "sso/io.hpp"

using namespace sso;
using namespace sso::bench;

namespace {

void emit(const std::filesystem::path& path, const std::string& text) {
  if (path.empty()) std::cout << text;
  else io::write_file(path, text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Key generation and certificate issuance benchmarks"};
  app.footer(
      "CSV columns:\n"
      "  keygen:    iteration (1-based), micros (wall time of one keypair generation)\n"
      "  issuance:  concurrency (simultaneous clients), mean-ms and p95-ms (client-observed\n"
      "             enrollment latency, milliseconds), keygen-share (server keygen time over\n"
      "             server issuance time, 0..1)\n"
      "plot turns either CSV into whitespace-separated columns under a '#' header.");
  app.require_subcommand(1);

  int bits = 2048, iterations = 20;
  std::filesystem::path csv;
  auto* keygen = app.add_subcommand("keygen", "Time RSA keypair generation");
  keygen->add_option("--bits", bits)->check(CLI::IsMember({1024, 2048}))->capture_default_str();
  keygen->add_option("--iterations", iterations)->capture_default_str();
  keygen->add_option("--csv", csv, "Output file (default stdout)");

  IssuanceOptions iopts;
  std::string keypool = "off";
  auto* issuance = app.add_subcommand("issuance", "Concurrent enrollments against a loopback home server");
  issuance->add_option("--levels", iopts.levels, "Concurrency levels")
      ->delimiter(',')
      ->capture_default_str();
  issuance->add_option("--requests", iopts.requests_per_level, "Rounds per level")
      ->capture_default_str();
  issuance->add_option("--keypool", keypool)->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  issuance->add_option("--bits", iopts.key_bits, "Client key size")
      ->check(CLI::IsMember({1024, 2048}))
      ->capture_default_str();
  issuance->add_option("--csv", csv, "Output file (default stdout)");

  std::filesystem::path in, out;
  auto* plot = app.add_subcommand("plot", "Convert a benchmark CSV to gnuplot data");
  plot->add_option("--csv", in, "Input CSV")->required();
  plot->add_option("--out", out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*keygen) {
      Rng rng = Rng::from_entropy();
      auto rows = bench_keygen(bits, iterations, rng);
      std::vector<double> us;
      for (const auto& r : rows) us.push_back(static_cast<double>(r.micros));
      Summary s = summarize(us);
      std::cerr << fmt::format("keygen {} bits x{}: mean {:.0f} us, median {:.0f} us, p95 {:.0f} us\n",
                               bits, s.count, s.mean, s.median, s.p95);
      emit(csv, keygen_csv(rows));
    } else if (*issuance) {
      iopts.keypool = keypool == "on";
      auto rows = bench_issuance(iopts, [](const IssuanceRow& r) {
        std::cerr << fmt::format("concurrency {:>3}: mean {:8.1f} ms  p95 {:8.1f} ms  keygen {:5.1f}%{}\n",
                                 r.concurrency, r.mean_ms, r.p95_ms, r.keygen_share * 100,
                                 r.failures ? fmt::format("  ({} failed)", r.failures) : "");
      });
      emit(csv, issuance_csv(rows));
    } else {
      emit(out, emit_plotdata(io::read_file(in)));
    }
  } catch (const Error& e) {
    std::cerr << "sso-bench: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
