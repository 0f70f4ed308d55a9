#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "sso/harness.hpp"
#include "sso/io.hpp"

using namespace sso;
using namespace sso::sim;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitPredicateFailed = 1;
constexpr int kExitUsage = 2;

std::string errc_summary(const std::map<Errc, std::size_t>& m) {
  std::string out;
  for (const auto& [code, n] : m) {
    if (!out.empty()) out += ", ";
    out += fmt::format("{} x{}", sso::to_string(code), n);
  }
  return out.empty() ? "none" : out;
}

void print_summary(std::ostream& os, const RunResult& r) {
  os << fmt::format("seed {}  simulated {} ms{}  frames {}  handshake frames delivered {}\n",
                    r.seed, r.end_ms, r.hit_max_time ? " (hit max time)" : "",
                    r.transcript.entries.size(), r.transcript.protocol_frames_delivered());
  for (const auto& c : r.clients) {
    os << fmt::format("{}: enroll {}{}", c.name, to_string(c.enroll),
                      c.enroll_error ? fmt::format(" ({})", sso::to_string(*c.enroll_error)) : "");
    if (c.stale_ignored) os << fmt::format(", {} stale frames ignored", c.stale_ignored);
    os << "\n";
    for (const auto& a : c.accesses) {
      os << fmt::format("  res{} {}: {}", a.intent.server, a.intent.resource, to_string(a.outcome));
      if (a.error) os << fmt::format(" ({})", sso::to_string(*a.error));
      if (a.status) os << fmt::format(" [{}]", resource::to_string(*a.status));
      os << "\n";
    }
  }
  auto server = [&](const ServerReport& s) {
    os << fmt::format("{}: {} handshakes, {} resends, {} requests, rejections: {}\n", s.name,
                      s.handshakes, s.resends, s.requests, errc_summary(s.rejections));
  };
  server(r.home);
  for (const auto& s : r.resources) server(s);
  os << fmt::format("issued {}  sessions {}\n", r.issued.size(), r.sessions.size());
  for (const auto& n : r.notes) os << "note: " << n << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic network simulator for the sign-on protocol"};
  app.footer("Exit codes: 0 all predicates pass, 1 a predicate failed, 2 bad scenario or usage.");
  app.require_subcommand(1);

  std::filesystem::path scenario_path, report_path, transcript_path;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run one scenario and check the transcript predicates");
  run->add_option("--scenario", scenario_path, "Scenario file")->required();
  run->add_option("--seed", seed, "Defaults to the scenario's seed, else 1");
  run->add_option("--report", report_path, "Write PASS/FAIL lines here (default stdout)");
  run->add_option("--transcript", transcript_path, "Write the transcript as text");

  std::uint64_t first = 0, count = 100;
  auto* sweep = app.add_subcommand("sweep", "Run a scenario over a range of seeds");
  sweep->add_option("--scenario", scenario_path, "Scenario file")->required();
  sweep->add_option("--first-seed", first)->capture_default_str();
  sweep->add_option("--seeds", count, "Number of seeds")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  Scenario sc;
  try {
    sc = Scenario::load(scenario_path);
  } catch (const Error& e) {
    std::cerr << "sso-sim: " << e.what() << "\n";
    return kExitUsage;
  }

  if (*run) {
    std::uint64_t s = seed.value_or(sc.seed.value_or(1));
    RunResult r = run_scenario(sc, s);
    auto results = assert_transcript(r, all_predicates(), sc.protocol);
    std::string report = format_report(results);
    print_summary(report_path.empty() ? std::cerr : std::cout, r);
    if (!transcript_path.empty()) io::write_file(transcript_path, r.transcript.to_text());
    if (report_path.empty()) {
      std::cout << report;
    } else {
      io::write_file(report_path, report);
    }
    for (const auto& p : results) {
      if (!p.pass) return kExitPredicateFailed;
    }
    return kExitPass;
  }

  std::size_t enrolled = 0, accessed = 0, intents = 0, failed_runs = 0;
  for (std::uint64_t s = first; s < first + count; ++s) {
    RunResult r = run_scenario(sc, s);
    for (const auto& c : r.clients) {
      if (c.enroll == Outcome::kOk) ++enrolled;
      for (const auto& a : c.accesses) {
        ++intents;
        if (a.outcome == Outcome::kOk || a.outcome == Outcome::kDenied) ++accessed;
      }
    }
    for (const auto& p : assert_transcript(r, all_predicates(), sc.protocol)) {
      if (!p.pass) {
        ++failed_runs;
        std::cout << fmt::format("seed {}: FAIL {}: {}\n", s, to_string(p.predicate), p.detail);
        break;
      }
    }
  }
  std::size_t clients = sc.clients.size() * count;
  std::cout << fmt::format("runs {}  enrollments {}/{} ({:.4f})  accesses {}/{}  predicate failures {}\n",
                           count, enrolled, clients,
                           clients ? static_cast<double>(enrolled) / static_cast<double>(clients) : 0.0,
                           accessed, intents, failed_runs);
  return failed_runs ? kExitPredicateFailed : kExitPass;
}
