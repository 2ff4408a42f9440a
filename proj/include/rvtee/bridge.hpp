// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <istream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "rvtee/rvmon.hpp"
#include "rvtee/seallog.hpp"
#include "rvtee/taint.hpp"

namespace rvtee::bridge {

inline constexpr std::size_t kMaxLineLength = 1 << 20;
inline constexpr const char* kEndpointEnv = "RVTEE_BRIDGE_ENDPOINT";

/// Parses one wire line ({"seq","ts","boundary","channel","dir","payload_b64"}).
/// A single trailing '\n' is accepted. Throws Error(MalformedEvent) or
/// Error(OversizeLine).
rv::Event decode_wire(std::string_view line);

/// Canonical wire form, newline-terminated, keys in protocol order.
std::string encode_wire(const rv::Event& event);

enum class CommandKind { Pause, Resume, Flag };

struct Command {
  CommandKind kind = CommandKind::Flag;
  std::string property_id;  // Flag only

  friend bool operator==(const Command&, const Command&) = default;
};

/// {"cmd":"pause"} / {"cmd":"resume"} / {"cmd":"flag","property_id":"..."}
std::string encode_command(const Command& command);
Command decode_command(std::string_view line);

/// Newline-delimited, bounded line transport.
class LineChannel {
 public:
  enum class ReadStatus { Line, Oversize, Partial, Eof };
  struct ReadResult {
    ReadStatus status = ReadStatus::Eof;
    std::string line;  // without the terminator
  };

  virtual ~LineChannel() = default;
  ReadResult read_line(std::size_t max_length = kMaxLineLength);
  /// Throws Error(Io) when the peer is gone.
  virtual void write(std::string_view data) = 0;

 protected:
  /// Returns 0 at end of stream. Throws Error(Io).
  virtual std::size_t read_some(char* buf, std::size_t cap) = 0;

 private:
  std::string buf_;
  bool discarding_ = false;
  bool eof_ = false;
};

class StreamChannel final : public LineChannel {
 public:
  StreamChannel(std::istream& in, std::ostream& out) : in_(in), out_(out) {}
  void write(std::string_view data) override;

 protected:
  std::size_t read_some(char* buf, std::size_t cap) override;

 private:
  std::istream& in_;
  std::ostream& out_;
};

/// Owns a connected socket (or pipe) descriptor.
class FdChannel final : public LineChannel {
 public:
  explicit FdChannel(int fd) : fd_(fd) {}
  ~FdChannel() override;
  FdChannel(const FdChannel&) = delete;
  FdChannel& operator=(const FdChannel&) = delete;

  void write(std::string_view data) override;
  void shutdown_write();
  int fd() const noexcept { return fd_; }

 protected:
  std::size_t read_some(char* buf, std::size_t cap) override;

 private:
  int fd_;
};

struct Endpoint {
  enum class Kind { Tcp, Unix };
  Kind kind = Kind::Unix;
  std::string host;
  std::uint16_t port = 0;
  std::string path;

  std::string to_string() const;
};

/// "unix:/path", "/path", "tcp://host:port" or "host:port".
Endpoint parse_endpoint(std::string_view text);
std::unique_ptr<FdChannel> connect_endpoint(const Endpoint& endpoint);

struct SessionOptions {
  std::uint64_t event_log_id = 1;
  bool pause_on_violation = false;
  std::uint64_t heartbeat_every = 0;  // events between heartbeats, 0 = off
};

struct SessionSummary {
  std::uint64_t events = 0;          // lines that decoded
  std::uint64_t sealed_events = 0;
  std::uint64_t processed = 0;       // events accepted by the monitor
  std::uint64_t verdicts = 0;
  std::uint64_t violations = 0;
  std::uint64_t taint_matches = 0;
  std::uint64_t rejects = 0;         // malformed + oversize + partial + out-of-order
  std::uint64_t malformed = 0;
  std::uint64_t oversize = 0;
  std::uint64_t out_of_order = 0;
  std::uint64_t seq_gaps = 0;
  std::uint64_t commands_sent = 0;
  std::vector<rv::Verdict> verdict_log;
  std::optional<std::string> fatal;  // set when sealing failed (fail-closed)
  std::optional<std::string> connection_error;
};

std::string to_text(const SessionSummary& summary);

/// Serves one connection: decode, seal the raw line, monitor, taint-scan
/// outbound payloads, send commands back. Never throws for peer or protocol
/// problems; they end up in the summary.
SessionSummary run_session(LineChannel& channel, rv::Monitor& monitor,
                           const taint::Scanner& scanner, seal::Sealer& sealer,
                           const SessionOptions& options = {});

/// Accepts connections and runs one session per connection on its own
/// thread. All sessions share the sealer; each gets a fresh monitor.
class BridgeServer {
 public:
  BridgeServer(Endpoint endpoint, std::vector<rv::PropertyAutomaton> automata,
               taint::Scanner scanner, seal::Sealer& sealer, SessionOptions options = {},
               std::uint64_t verdict_log_id = rv::Monitor::kDefaultVerdictLog);
  ~BridgeServer();

  /// Binds and listens. For TCP port 0 the chosen port is in endpoint().
  void start();
  /// Accept loop; returns after stop() or once max_sessions have finished.
  void serve(std::size_t max_sessions = 0);
  void stop();

  const Endpoint& endpoint() const noexcept { return endpoint_; }
  std::vector<SessionSummary> summaries() const;

 private:
  void handle(int fd);

  Endpoint endpoint_;
  std::vector<rv::PropertyAutomaton> automata_;
  taint::Scanner scanner_;
  seal::Sealer& sealer_;
  SessionOptions options_;
  std::uint64_t verdict_log_id_;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  mutable std::mutex mu_;
  std::vector<SessionSummary> summaries_;
  std::vector<std::thread> workers_;
};

/// Application-side shim: streams events to a bridge and collects the
/// commands it sends back.
class EventStreamClient {
 public:
  explicit EventStreamClient(const Endpoint& endpoint);
  ~EventStreamClient();

  void emit(const rv::Event& event);
  /// Half-closes the stream and waits until the bridge closes its side.
  void finish();
  std::vector<Command> commands() const;

 private:
  std::unique_ptr<FdChannel> channel_;
  std::thread reader_;
  mutable std::mutex mu_;
  std::vector<Command> commands_;
  bool finished_ = false;
};

}  // namespace rvtee::bridge
