// SPDX-License-Identifier: Apache-2.0
#include "rvtee/cli.hpp"

#include <signal.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <atomic>
#include <iostream>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "rvtee/bridge.hpp"
#include "rvtee/entropy.hpp"
#include "rvtee/error.hpp"
#include "rvtee/file.hpp"
#include "rvtee/hsm.hpp"
#include "rvtee/seallog.hpp"
#include "rvtee/tamper.hpp"
#include "rvtee/verifier.hpp"

namespace rvtee::cli {

namespace fs = std::filesystem;

const char* const kBenchProperties = R"(property handshake
states: init keyex established violation
initial: init
violation: violation
init -> keyex on ra_ree/hello/out
keyex -> established on ra_tee/keyex/in
init -> violation on */keyex/*
init -> violation on */data/*
keyex -> violation on */data/*
)";

StoreLayout StoreLayout::at(const fs::path& dir, const std::optional<fs::path>& safe_copy) {
  StoreLayout s;
  s.dir = dir;
  s.device = dir / "hsm.dev";
  s.seal_log = dir / "seal.log";
  s.registry = dir / "registry.tsv";
  s.safe_copy = safe_copy ? *safe_copy : dir / "forensic" / "keystream.rvk";
  return s;
}

namespace {

struct Settings {
  std::string store = "rvtee-store";
  std::string forensic_dir;
  std::string safe_copy;
  std::string endpoint;
  std::vector<std::string> properties;
  std::string patterns;
  taint::TaintConfig taint;
  bool sync = false;

  StoreLayout layout() const {
    std::optional<fs::path> copy;
    if (!safe_copy.empty()) {
      copy = safe_copy;
    } else if (!forensic_dir.empty()) {
      copy = fs::path(forensic_dir) / "keystream.rvk";
    }
    return StoreLayout::at(store, copy);
  }

  bridge::Endpoint bridge_endpoint() const {
    if (!endpoint.empty()) return bridge::parse_endpoint(endpoint);
    return bridge::parse_endpoint("unix:" + (fs::path(store) / "bridge.sock").string());
  }
};

// Usage problems detected after parsing (bad files, bad config values).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& path, std::string_view what) {
  if (!fs::is_regular_file(path)) {
    throw UsageError(fmt::format("{} not found: {}", what, path.string()));
  }
}

std::vector<rv::PropertyAutomaton> load_properties(const std::vector<std::string>& paths,
                                                   std::ostream& err) {
  std::vector<rv::PropertyAutomaton> automata;
  for (const auto& p : paths) {
    require_file(p, "property file");
    rv::SpecLoadResult loaded;
    try {
      loaded = rv::load_spec(read_text_file(p));
    } catch (const Error& e) {
      throw UsageError(fmt::format("{}: {}", p, e.what()));
    }
    for (const auto& w : loaded.warnings) err << p << ": warning: " << w << "\n";
    for (auto& a : loaded.automata) automata.push_back(std::move(a));
  }
  return automata;
}

std::vector<taint::SensitivePattern> load_pattern_file(const std::string& path) {
  if (path.empty()) return {};
  require_file(path, "pattern file");
  try {
    return taint::load_patterns(path);
  } catch (const Error& e) {
    throw UsageError(fmt::format("{}: {}", path, e.what()));
  }
}

taint::Scanner make_scanner(std::vector<taint::SensitivePattern> patterns,
                            const taint::TaintConfig& config) {
  try {
    return taint::Scanner(std::move(patterns), config);
  } catch (const Error& e) {
    throw UsageError(std::string("taint configuration: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// init

struct InitArgs {
  std::uint64_t key_length = hsm::kDefaultKeyLength;
  std::uint64_t chunk_size = hsm::kDefaultChunkSize;
  bool force = false;
  std::optional<std::uint64_t> seed;
};

int cmd_init(const Settings& settings, const InitArgs& args, std::ostream& out) {
  auto layout = settings.layout();
  hsm::Geometry geometry{args.key_length, args.chunk_size};
  try {
    hsm::validate(geometry);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  const fs::path events = layout.dir / "events.log";
  const fs::path verdicts = layout.dir / "verdicts.log";
  if (fs::exists(layout.dir) && !fs::is_empty(layout.dir) && !args.force) {
    throw UsageError(fmt::format("store directory {} is not empty (use --force to reinitialize)",
                                 layout.dir.string()));
  }
  if (fs::exists(layout.safe_copy) && !args.force) {
    throw UsageError(fmt::format("safe copy {} exists (use --force to overwrite)",
                                 layout.safe_copy.string()));
  }
  // --force replaces only the files this tool owns.
  for (const auto& p : {layout.device, layout.seal_log, layout.registry, layout.safe_copy, events,
                        verdicts}) {
    fs::remove(p);
  }
  fs::create_directories(layout.dir);
  fs::create_directories(layout.safe_copy.parent_path());

  std::unique_ptr<EntropySource> entropy;
  if (args.seed) {
    entropy = std::make_unique<SeededEntropy>(*args.seed);
  } else {
    entropy = make_system_entropy();
  }
  auto provisioned = hsm::Hsm::provision(std::move(entropy), geometry, layout.device);
  provisioned.safe_copy.save(layout.safe_copy);

  seal::Registry registry{{kEventLog, events}, {kVerdictLog, verdicts}};
  seal::save_registry(layout.registry, registry);
  seal::SealLogStore::create(layout.seal_log, registry, *provisioned.device);

  out << fmt::format("initialized store {}\n", layout.dir.string());
  out << fmt::format("capacity: {} appends (key {} bytes, chunk {} bytes)\n", geometry.chunks(),
                     geometry.key_length, geometry.chunk_size);
  out << fmt::format("safe copy: {}\n", layout.safe_copy.string());
  return kOk;
}

// ---------------------------------------------------------------------------
// monitor

struct MonitorArgs {
  bool use_stdin = false;
  std::size_t max_sessions = 0;
  bool pause_on_violation = false;
  std::uint64_t heartbeat_every = 0;
};

std::atomic<bridge::BridgeServer*> g_server{nullptr};

extern "C" void on_stop_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

int cmd_monitor(const Settings& settings, const MonitorArgs& args, std::istream& in,
                std::ostream& out, std::ostream& err) {
  auto layout = settings.layout();
  if (settings.properties.empty()) throw UsageError("monitor needs at least one --properties file");
  auto automata = load_properties(settings.properties, err);
  auto scanner = make_scanner(load_pattern_file(settings.patterns), settings.taint);
  require_file(layout.device, "device file");
  require_file(layout.seal_log, "SEAL_log");
  require_file(layout.registry, "registry");

  auto registry = seal::load_registry(layout.registry);
  auto device = hsm::Hsm::open(layout.device, make_system_entropy());
  auto store = seal::SealLogStore::open(layout.seal_log, registry, *device,
                                        seal::SealLogStore::Options{settings.sync});
  for (const auto& o : store->orphans()) {
    err << fmt::format("warning: log {} has unsealed bytes [{}, {})\n", o.log_id, o.begin, o.end);
  }
  for (const auto& w : store->warnings()) err << "warning: " << w << "\n";

  bridge::SessionOptions options;
  options.event_log_id = kEventLog;
  options.pause_on_violation = args.pause_on_violation;
  options.heartbeat_every = args.heartbeat_every;

  std::vector<bridge::SessionSummary> summaries;
  if (args.use_stdin) {
    bridge::StreamChannel channel(in, out);
    rv::Monitor monitor(automata, store.get(), kVerdictLog);
    summaries.push_back(bridge::run_session(channel, monitor, scanner, *store, options));
    err << "session: " << bridge::to_text(summaries.back()) << "\n";
  } else {
    bridge::BridgeServer server(settings.bridge_endpoint(), automata, scanner, *store, options,
                                kVerdictLog);
    server.start();
    out << "listening on " << server.endpoint().to_string() << std::endl;
    g_server = &server;
    struct sigaction sa {};
    sa.sa_handler = on_stop_signal;
    sigemptyset(&sa.sa_mask);
    struct sigaction old_int {}, old_term {};
    sigaction(SIGINT, &sa, &old_int);
    sigaction(SIGTERM, &sa, &old_term);
    server.serve(args.max_sessions);
    g_server = nullptr;
    sigaction(SIGINT, &old_int, nullptr);
    sigaction(SIGTERM, &old_term, nullptr);
    server.stop();
    summaries = server.summaries();
    for (std::size_t i = 0; i < summaries.size(); ++i) {
      out << fmt::format("session {}: {}\n", i + 1, bridge::to_text(summaries[i]));
    }
  }

  for (const auto& s : summaries) {
    if (s.fatal) return kFatal;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyArgs {
  std::optional<std::uint64_t> attested_offset;
  bool attest_from_device = false;
  bool json = false;
};

int cmd_verify(const Settings& settings, const VerifyArgs& args, std::ostream& out) {
  auto layout = settings.layout();
  require_file(layout.seal_log, "SEAL_log");
  require_file(layout.registry, "registry");
  require_file(layout.safe_copy, "safe copy");
  if (args.attested_offset && args.attest_from_device) {
    throw UsageError("--attested-offset and --attest-from-device are mutually exclusive");
  }

  std::optional<std::uint64_t> attested = args.attested_offset;
  if (args.attest_from_device) {
    require_file(layout.device, "device file");
    attested = hsm::read_device_key_offset(layout.device);
  }
  hsm::SafeCopy copy = [&] {
    try {
      return hsm::SafeCopy::load(layout.safe_copy);
    } catch (const Error& e) {
      throw UsageError(fmt::format("{}: {}", layout.safe_copy.string(), e.what()));
    }
  }();
  seal::Registry registry = [&] {
    try {
      return seal::load_registry(layout.registry);
    } catch (const Error& e) {
      throw UsageError(fmt::format("{}: {}", layout.registry.string(), e.what()));
    }
  }();

  auto report = verify::verify(registry, layout.seal_log, copy, attested);
  auto text = args.json ? verify::to_json(report) : verify::to_text(report);
  if (text.empty() || text.back() != '\n') text += '\n';
  out << text;
  return report.pass ? kOk : kTamperEvidence;
}

// ---------------------------------------------------------------------------
// tamper

struct TamperArgs {
  std::string kind;
  std::string target = "log";
  std::optional<std::uint64_t> log_id, offset, record, record2, length, value;
  std::string field;
  std::optional<std::uint64_t> seed;
};

int cmd_tamper(const Settings& settings, const TamperArgs& args, std::ostream& out) {
  auto kind = tamper::parse_kind(args.kind);
  if (!kind) throw UsageError(fmt::format("unknown tamper kind '{}'", args.kind));
  auto layout = settings.layout();
  require_file(layout.seal_log, "SEAL_log");
  require_file(layout.registry, "registry");

  tamper::Request req;
  req.kind = *kind;
  req.target_seal_log = args.target == "seal";
  req.log_id = args.log_id;
  req.offset = args.offset;
  req.record = args.record;
  req.record2 = args.record2;
  req.length = args.length;
  req.value = args.value;
  if (!args.field.empty()) {
    req.field = tamper::parse_field(args.field);
    if (!req.field) throw UsageError(fmt::format("unknown field '{}'", args.field));
  }

  auto seed = args.seed ? *args.seed : std::random_device{}();
  std::mt19937_64 rng(seed);
  tamper::StoreFiles files{layout.seal_log, seal::load_registry(layout.registry)};
  try {
    out << tamper::apply(files, req, rng) << fmt::format(" (seed {})\n", seed);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw UsageError(e.what());
    throw;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string scenario = "both";
  std::size_t runs = 10;
  std::size_t clients = 3;
  std::uint64_t pause_ms = 20;
};

int cmd_bench(const Settings& settings, const BenchArgs& args, std::ostream& out,
              std::ostream& err) {
  BenchOptions options;
  if (args.scenario != "both") {
    auto s = fixture::parse_scenario(args.scenario);
    if (!s) throw UsageError(fmt::format("unknown scenario '{}'", args.scenario));
    options.scenarios = {*s};
  }
  if (args.runs == 0) throw UsageError("--runs must be at least 1");
  options.runs = args.runs;
  options.clients = args.clients;
  options.pause = std::chrono::milliseconds(args.pause_ms);
  options.automata = load_properties(settings.properties, err);
  options.patterns = load_pattern_file(settings.patterns);
  options.taint = settings.taint;
  make_scanner(options.patterns, options.taint);

  BenchReport report;
  try {
    report = run_bench(options);
  } catch (const std::exception& e) {
    err << "bench aborted: " << e.what() << "\n";
    return kFatal;
  }
  out << format_bench(report);
  return report.store_verified ? kOk : kFatal;
}

}  // namespace

// ---------------------------------------------------------------------------

BenchReport run_bench(const BenchOptions& options) {
  using Clock = std::chrono::steady_clock;
  fs::path dir = options.work_dir;
  bool scratch = dir.empty();
  if (scratch) {
    dir = fs::temp_directory_path() /
          fmt::format("rvtee-bench-{}-{}", ::getpid(), Clock::now().time_since_epoch().count());
  }
  fs::create_directories(dir);
  struct Cleanup {
    fs::path dir;
    bool active;
    ~Cleanup() {
      std::error_code ec;
      if (active) fs::remove_all(dir, ec);
    }
  } cleanup{dir, scratch};

  auto automata = options.automata;
  if (automata.empty()) automata = rv::load_spec(kBenchProperties).automata;

  auto layout = StoreLayout::at(dir);
  auto provisioned = hsm::Hsm::provision(make_system_entropy(), hsm::Geometry{}, layout.device);
  seal::Registry registry{{kEventLog, dir / "events.log"}, {kVerdictLog, dir / "verdicts.log"}};
  auto store = seal::SealLogStore::create(layout.seal_log, registry, *provisioned.device);

  bridge::BridgeServer server(bridge::parse_endpoint("unix:" + (dir / "bench.sock").string()),
                              automata, taint::Scanner(options.patterns, options.taint), *store,
                              {}, kVerdictLog);
  server.start();
  std::thread acceptor([&] { server.serve(); });
  struct StopServer {
    bridge::BridgeServer& server;
    std::thread& t;
    ~StopServer() {
      server.stop();
      if (t.joinable()) t.join();
    }
  } stopper{server, acceptor};

  BenchReport report;
  report.runs = options.runs;
  std::vector<double> plain(options.scenarios.size()), instr(options.scenarios.size());
  std::vector<std::uint64_t> events(options.scenarios.size());

  for (std::size_t run = 0; run < options.runs; ++run) {
    for (std::size_t si = 0; si < options.scenarios.size(); ++si) {
      fixture::ChatOptions chat;
      chat.scenario = options.scenarios[si];
      chat.clients = options.clients;
      chat.pause = options.pause;
      // Alternate the order so slow drift does not favour either mode.
      for (int pass = 0; pass < 2; ++pass) {
        bool instrumented = (pass == 0) == (run % 2 == 1);
        chat.instrument.reset();
        if (instrumented) chat.instrument = server.endpoint();
        auto result = fixture::run_chat(chat);
        if (instrumented) {
          instr[si] += result.seconds;
          events[si] = result.events_emitted;
        } else {
          plain[si] += result.seconds;
        }
      }
    }
  }

  server.stop();
  acceptor.join();
  for (const auto& s : server.summaries()) {
    if (s.fatal) throw Error(ErrorCode::Io, "bridge session failed: " + *s.fatal);
    report.sealed_events += s.sealed_events;
  }

  double plain_total = 0, instr_total = 0;
  for (std::size_t si = 0; si < options.scenarios.size(); ++si) {
    ScenarioTiming t;
    t.scenario = options.scenarios[si];
    t.runs = options.runs;
    t.plain_mean = plain[si] / static_cast<double>(options.runs);
    t.instrumented_mean = instr[si] / static_cast<double>(options.runs);
    t.increase = (t.instrumented_mean - t.plain_mean) / t.plain_mean;
    t.events_per_run = events[si];
    plain_total += t.plain_mean;
    instr_total += t.instrumented_mean;
    report.scenarios.push_back(t);
  }
  report.combined_increase = (instr_total - plain_total) / plain_total;

  auto verdict = verify::verify(registry, layout.seal_log, provisioned.safe_copy,
                                provisioned.device->attested_key_offset());
  report.store_verified = verdict.pass;
  return report;
}

std::string format_bench(const BenchReport& report) {
  auto cell = [&](fixture::Scenario s, bool instrumented) -> std::string {
    for (const auto& t : report.scenarios) {
      if (t.scenario == s) return fmt::format("{:.3f}", instrumented ? t.instrumented_mean : t.plain_mean);
    }
    return "-";
  };
  using fixture::Scenario;
  std::string out;
  out += fmt::format("Runtime overheads (seconds, mean of {} runs)\n", report.runs);
  out += fmt::format("{:<12} | {:^21} | {:^21} | {:>9}\n", "Time (s)", "No Instrumentation",
                     "Instrumentation", "Increase");
  out += fmt::format("{:<12} | {:>10} {:>10} | {:>10} {:>10} | {:>9}\n", "Scenario", "A", "B", "A",
                     "B", "A & B");
  out += fmt::format("{:<12} | {:>10} {:>10} | {:>10} {:>10} | {:>8.2f}%\n", report.label,
                     cell(Scenario::A, false), cell(Scenario::B, false), cell(Scenario::A, true),
                     cell(Scenario::B, true), report.combined_increase * 100.0);
  for (const auto& t : report.scenarios) {
    out += fmt::format("scenario {}: {} events streamed per instrumented run, increase {:.2f}%\n",
                       fixture::to_string(t.scenario), t.events_per_run, t.increase * 100.0);
  }
  out += fmt::format("sealed events: {}, store verification: {}\n", report.sealed_events,
                     report.store_verified ? "PASS" : "FAIL");
  return out;
}

int run(int argc, const char* const* argv, std::istream& in, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Tamper-evident runtime verification toolkit"};
  app.name("rvtee");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Text config file (key = value; [subcommand] sections)");

  Settings settings;
  app.add_option("--store", settings.store, "Store directory")->capture_default_str();
  app.add_option("--forensic-dir", settings.forensic_dir,
                 "Directory for the keystream safe copy (default <store>/forensic)");
  app.add_option("--safe-copy", settings.safe_copy, "Path of the keystream safe copy file");
  app.add_option("--endpoint", settings.endpoint,
                 "Bridge endpoint: host:port, tcp://host:port, unix:/path or /path "
                 "(default unix:<store>/bridge.sock)");
  app.add_option("--properties", settings.properties, "Property files");
  app.add_option("--patterns", settings.patterns, "Sensitive patterns file (id<TAB>hex per line)");
  app.add_option("--taint-window", settings.taint.window_size, "Coarse filter window (octets)")
      ->capture_default_str();
  app.add_option("--taint-stride", settings.taint.stride, "Coarse filter stride (octets)")
      ->capture_default_str();
  app.add_option("--taint-threshold", settings.taint.coarse_threshold,
                 "Fraction of pattern q-grams a window must share")
      ->capture_default_str();
  app.add_option("--taint-max-edits", settings.taint.max_edit_distance, "Maximum edit distance")
      ->capture_default_str();
  app.add_option("--taint-qgram", settings.taint.qgram_size, "q-gram length")
      ->capture_default_str();
  app.add_flag("--sync", settings.sync, "fsync log and SEAL_log after every append");

  InitArgs init_args;
  auto* init = app.add_subcommand("init", "Provision a keystream and create an empty store");
  init->add_option("--key-length", init_args.key_length, "Keystream length (octets)")
      ->capture_default_str();
  init->add_option("--chunk-size", init_args.chunk_size, "Chunk burned per append (octets)")
      ->capture_default_str();
  init->add_flag("--force", init_args.force, "Replace an existing store");
  init->add_option("--seed", init_args.seed, "Deterministic keystream seed (drills and tests only)");

  MonitorArgs monitor_args;
  auto* monitor = app.add_subcommand("monitor", "Run the event bridge and monitor");
  monitor->add_flag("--stdin", monitor_args.use_stdin,
                    "Serve one session on stdin/stdout instead of listening");
  monitor->add_option("--max-sessions", monitor_args.max_sessions,
                      "Exit after this many sessions (0 = until signalled)")
      ->capture_default_str();
  monitor->add_flag("--pause-on-violation", monitor_args.pause_on_violation,
                    "Send pause on violation and resume on recovery");
  monitor->add_option("--heartbeat-every", monitor_args.heartbeat_every,
                      "Seal a heartbeat verdict every N processed events (0 = off)")
      ->capture_default_str();

  VerifyArgs verify_args;
  auto* verify_cmd = app.add_subcommand("verify", "Verify logs against the safe copy");
  verify_cmd->add_option("--attested-offset", verify_args.attested_offset,
                         "Device key offset obtained out of band");
  verify_cmd->add_flag("--attest-from-device", verify_args.attest_from_device,
                       "Read the key offset from the store's device file");
  verify_cmd->add_flag("--json", verify_args.json, "Machine-readable report");

  TamperArgs tamper_args;
  auto* tamper_cmd = app.add_subcommand("tamper", "Apply one adversarial mutation (drills)");
  tamper_cmd
      ->add_option("kind", tamper_args.kind,
                   "flip-byte | truncate-log | drop-record | swap-records | edit-field")
      ->required();
  tamper_cmd->add_option("--target", tamper_args.target, "flip-byte target: log or seal")
      ->check(CLI::IsMember({"log", "seal"}))
      ->capture_default_str();
  tamper_cmd->add_option("--log", tamper_args.log_id, "Log id (flip-byte, truncate-log)");
  tamper_cmd->add_option("--offset", tamper_args.offset, "Byte offset (flip-byte)");
  tamper_cmd->add_option("--record", tamper_args.record, "Record index");
  tamper_cmd->add_option("--record2", tamper_args.record2, "Second record index (swap-records)");
  tamper_cmd->add_option("--length", tamper_args.length, "New log length (truncate-log)");
  tamper_cmd->add_option("--field", tamper_args.field,
                         "log_id | log_offset | data_size | key_offset | hmac (edit-field)");
  tamper_cmd->add_option("--value", tamper_args.value, "New field value (edit-field)");
  tamper_cmd->add_option("--seed", tamper_args.seed, "Seed for unspecified parameters");

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Measure instrumentation overhead on the chat fixture");
  bench->add_option("--scenario", bench_args.scenario, "A, B or both")->capture_default_str();
  bench->add_option("--runs", bench_args.runs, "Runs per scenario and mode")->capture_default_str();
  bench->add_option("--clients", bench_args.clients, "Chat clients per run")->capture_default_str();
  bench->add_option("--pause-ms", bench_args.pause_ms, "Think time between scripted lines")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*init) return cmd_init(settings, init_args, out);
    if (*monitor) return cmd_monitor(settings, monitor_args, in, out, err);
    if (*verify_cmd) return cmd_verify(settings, verify_args, out);
    if (*tamper_cmd) return cmd_tamper(settings, tamper_args, out);
    if (*bench) return cmd_bench(settings, bench_args, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    switch (e.code()) {
      case ErrorCode::InvalidGeometry:
      case ErrorCode::Config:
      case ErrorCode::Parse:
      case ErrorCode::Semantic:
        return kUsage;
      default:
        return kFatal;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFatal;
  }
  return kUsage;
}

}  // namespace rvtee::cli
