// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rvtee/fixture.hpp"
#include "rvtee/rvmon.hpp"
#include "rvtee/taint.hpp"

namespace rvtee::cli {

enum ExitStatus : int {
  kOk = 0,
  kTamperEvidence = 1,
  kUsage = 2,
  kFatal = 3,
};

/// On-disk layout of a store directory.
struct StoreLayout {
  std::filesystem::path dir;
  std::filesystem::path device;     // hsm.dev
  std::filesystem::path seal_log;   // seal.log
  std::filesystem::path registry;   // registry.tsv
  std::filesystem::path safe_copy;  // forensic copy of the keystream

  static StoreLayout at(const std::filesystem::path& dir,
                        const std::optional<std::filesystem::path>& safe_copy = {});
};

inline constexpr std::uint64_t kEventLog = 1;
inline constexpr std::uint64_t kVerdictLog = 2;

/// Property set the bench bridge monitors when none is configured.
extern const char* const kBenchProperties;

struct BenchOptions {
  std::vector<fixture::Scenario> scenarios{fixture::Scenario::A, fixture::Scenario::B};
  std::size_t runs = 10;
  std::size_t clients = 3;
  std::chrono::milliseconds pause{20};
  std::vector<rv::PropertyAutomaton> automata;  // empty: kBenchProperties
  std::vector<taint::SensitivePattern> patterns;
  taint::TaintConfig taint;
  std::filesystem::path work_dir;  // empty: a fresh temporary directory
};

struct ScenarioTiming {
  fixture::Scenario scenario = fixture::Scenario::A;
  std::size_t runs = 0;
  double plain_mean = 0;         // seconds
  double instrumented_mean = 0;  // seconds
  double increase = 0;           // (instrumented - plain) / plain
  std::uint64_t events_per_run = 0;
};

struct BenchReport {
  std::string label = "Desk-scale";
  std::size_t runs = 0;
  std::vector<ScenarioTiming> scenarios;
  double combined_increase = 0;  // over the summed means of all scenarios
  std::uint64_t sealed_events = 0;
  bool store_verified = false;
};

/// Runs every scenario `runs` times without and with event streaming to an
/// in-process bridge that seals into a scratch store. Throws when any run
/// aborts or a bridge session ends fatally.
BenchReport run_bench(const BenchOptions& options);

/// Table with fixed columns: No Instrumentation A/B, Instrumentation A/B,
/// Increase A & B.
std::string format_bench(const BenchReport& report);

/// Entry point of the `rvtee` tool. Returns the process exit status.
int run(int argc, const char* const* argv, std::istream& in, std::ostream& out,
        std::ostream& err);

}  // namespace rvtee::cli
