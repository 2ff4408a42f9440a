// SPDX-License-Identifier: Apache-2.0
#include "rvtee/bridge.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "rvtee/crypto.hpp"
#include "rvtee/error.hpp"

namespace rvtee::bridge {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void malformed(const std::string& why) {
  throw Error(ErrorCode::MalformedEvent, "malformed event: " + why);
}

std::string_view strip_newline(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  return line;
}

}  // namespace

rv::Event decode_wire(std::string_view line) {
  line = strip_newline(line);
  if (line.size() > kMaxLineLength) {
    throw Error(ErrorCode::OversizeLine, "event line exceeds " + std::to_string(kMaxLineLength) + " octets");
  }
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) malformed("not valid JSON");
  if (!j.is_object()) malformed("not an object");

  static const std::set<std::string> kKeys = {"seq", "ts", "boundary", "channel", "dir", "payload_b64"};
  for (const auto& [key, value] : j.items()) {
    if (!kKeys.contains(key)) malformed("unexpected key '" + key + "'");
  }
  for (const auto& key : kKeys) {
    if (!j.contains(key)) malformed("missing key '" + key + "'");
  }

  rv::Event e;
  const auto& seq = j["seq"];
  if (seq.is_number_unsigned()) {
    e.seq = seq.get<std::uint64_t>();
  } else if (seq.is_number_integer() && seq.get<std::int64_t>() >= 0) {
    e.seq = static_cast<std::uint64_t>(seq.get<std::int64_t>());
  } else {
    malformed("seq must be a non-negative integer");
  }
  const auto& ts = j["ts"];
  if (ts.is_number_unsigned()) {
    if (ts.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) malformed("ts out of range");
    e.timestamp = static_cast<std::int64_t>(ts.get<std::uint64_t>());
  } else if (ts.is_number_integer()) {
    e.timestamp = ts.get<std::int64_t>();
  } else {
    malformed("ts must be an integer");
  }
  for (const char* key : {"boundary", "channel", "dir", "payload_b64"}) {
    if (!j[key].is_string()) malformed(std::string(key) + " must be a string");
  }
  auto boundary = rv::parse_boundary(j["boundary"].get<std::string>());
  if (!boundary) malformed("boundary must be \"ra_tee\" or \"ra_ree\"");
  e.boundary = *boundary;
  auto dir = rv::parse_direction(j["dir"].get<std::string>());
  if (!dir) malformed("dir must be \"in\" or \"out\"");
  e.direction = *dir;
  e.channel = j["channel"].get<std::string>();
  auto payload = crypto::base64_decode(j["payload_b64"].get<std::string>());
  if (!payload) malformed("payload_b64 is not valid base64");
  e.payload = std::move(*payload);
  return e;
}

std::string encode_wire(const rv::Event& event) {
  ordered_json j;
  j["seq"] = event.seq;
  j["ts"] = event.timestamp;
  j["boundary"] = rv::to_string(event.boundary);
  j["channel"] = event.channel;
  j["dir"] = rv::to_string(event.direction);
  j["payload_b64"] = crypto::base64_encode(event.payload);
  try {
    return j.dump() + "\n";
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedEvent, std::string("cannot encode event: ") + e.what());
  }
}

std::string encode_command(const Command& command) {
  ordered_json j;
  switch (command.kind) {
    case CommandKind::Pause: j["cmd"] = "pause"; break;
    case CommandKind::Resume: j["cmd"] = "resume"; break;
    case CommandKind::Flag:
      j["cmd"] = "flag";
      j["property_id"] = command.property_id;
      break;
  }
  return j.dump() + "\n";
}

Command decode_command(std::string_view line) {
  json j = json::parse(strip_newline(line), nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("cmd") || !j["cmd"].is_string()) {
    throw Error(ErrorCode::MalformedEvent, "malformed command");
  }
  auto kind = j["cmd"].get<std::string>();
  if (kind == "pause" && j.size() == 1) return {CommandKind::Pause, {}};
  if (kind == "resume" && j.size() == 1) return {CommandKind::Resume, {}};
  if (kind == "flag" && j.size() == 2 && j.contains("property_id") && j["property_id"].is_string()) {
    return {CommandKind::Flag, j["property_id"].get<std::string>()};
  }
  throw Error(ErrorCode::MalformedEvent, "unknown command '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Channels

LineChannel::ReadResult LineChannel::read_line(std::size_t max_length) {
  std::size_t scanned = 0;
  for (;;) {
    auto nl = buf_.find('\n', scanned);
    if (nl != std::string::npos) {
      ReadResult r;
      if (discarding_) {
        discarding_ = false;
        r.status = ReadStatus::Oversize;
      } else if (nl > max_length) {
        r.status = ReadStatus::Oversize;
      } else {
        r.status = ReadStatus::Line;
        r.line = buf_.substr(0, nl);
      }
      buf_.erase(0, nl + 1);
      return r;
    }
    scanned = buf_.size();
    if (buf_.size() > max_length) {
      discarding_ = true;
      buf_.clear();
      scanned = 0;
    }
    if (eof_) {
      ReadResult r;
      if (discarding_) {
        r.status = ReadStatus::Oversize;
      } else if (!buf_.empty()) {
        r.status = ReadStatus::Partial;
      }
      discarding_ = false;
      buf_.clear();
      return r;
    }
    char tmp[64 * 1024];
    auto n = read_some(tmp, sizeof tmp);
    if (n == 0) {
      eof_ = true;
    } else {
      buf_.append(tmp, n);
    }
  }
}

void StreamChannel::write(std::string_view data) {
  out_.write(data.data(), static_cast<std::streamsize>(data.size()));
  out_.flush();
  if (!out_) throw Error(ErrorCode::Io, "output stream failed");
}

std::size_t StreamChannel::read_some(char* buf, std::size_t cap) {
  in_.read(buf, static_cast<std::streamsize>(cap));
  return static_cast<std::size_t>(in_.gcount());
}

FdChannel::~FdChannel() {
  if (fd_ >= 0) ::close(fd_);
}

void FdChannel::write(std::string_view data) {
  std::size_t done = 0;
  while (done < data.size()) {
    auto n = ::send(fd_, data.data() + done, data.size() - done, MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) n = ::write(fd_, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::Io, std::string("write failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

void FdChannel::shutdown_write() { ::shutdown(fd_, SHUT_WR); }

std::size_t FdChannel::read_some(char* buf, std::size_t cap) {
  for (;;) {
    auto n = ::read(fd_, buf, cap);
    if (n >= 0) return static_cast<std::size_t>(n);
    if (errno == EINTR) continue;
    if (errno == ECONNRESET) return 0;
    throw Error(ErrorCode::Io, std::string("read failed: ") + std::strerror(errno));
  }
}

// ---------------------------------------------------------------------------
// Endpoints

std::string Endpoint::to_string() const {
  if (kind == Kind::Unix) return "unix:" + path;
  return "tcp://" + host + ":" + std::to_string(port);
}

Endpoint parse_endpoint(std::string_view text) {
  Endpoint ep;
  if (text.starts_with("unix:")) {
    ep.kind = Endpoint::Kind::Unix;
    ep.path = std::string(text.substr(5));
  } else if (text.starts_with("/") || text.starts_with("./")) {
    ep.kind = Endpoint::Kind::Unix;
    ep.path = std::string(text);
  } else {
    if (text.starts_with("tcp://")) text.remove_prefix(6);
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon == 0) {
      throw Error(ErrorCode::Config, "endpoint must be host:port or a socket path");
    }
    ep.kind = Endpoint::Kind::Tcp;
    ep.host = std::string(text.substr(0, colon));
    auto port = text.substr(colon + 1);
    auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), ep.port);
    if (ec != std::errc{} || ptr != port.data() + port.size()) {
      throw Error(ErrorCode::Config, "invalid port in endpoint '" + std::string(text) + "'");
    }
  }
  if (ep.kind == Endpoint::Kind::Unix &&
      (ep.path.empty() || ep.path.size() >= sizeof(sockaddr_un::sun_path))) {
    throw Error(ErrorCode::Config, "invalid unix socket path");
  }
  return ep;
}

namespace {

sockaddr_un unix_address(const std::string& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  std::strncpy(addr.sun_path, path.c_str(), sizeof(addr.sun_path) - 1);
  return addr;
}

sockaddr_in tcp_address(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  std::string host = ep.host == "localhost" ? "127.0.0.1" : ep.host;
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw Error(ErrorCode::Config, "endpoint host must be an IPv4 address: " + ep.host);
  }
  return addr;
}

[[noreturn]] void socket_fail(const char* what) {
  throw Error(ErrorCode::Io, std::string(what) + ": " + std::strerror(errno));
}

}  // namespace

std::unique_ptr<FdChannel> connect_endpoint(const Endpoint& endpoint) {
  int fd = -1;
  if (endpoint.kind == Endpoint::Kind::Unix) {
    fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) socket_fail("socket");
    auto addr = unix_address(endpoint.path);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      ::close(fd);
      socket_fail("connect");
    }
  } else {
    fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) socket_fail("socket");
    auto addr = tcp_address(endpoint);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      ::close(fd);
      socket_fail("connect");
    }
  }
  return std::make_unique<FdChannel>(fd);
}

// ---------------------------------------------------------------------------
// Session

std::string to_text(const SessionSummary& s) {
  std::string out = fmt::format(
      "events={} sealed={} processed={} verdicts={} violations={} taint_matches={} "
      "rejects={} (malformed={} oversize={} out_of_order={}) seq_gaps={} commands={}",
      s.events, s.sealed_events, s.processed, s.verdicts, s.violations, s.taint_matches,
      s.rejects, s.malformed, s.oversize, s.out_of_order, s.seq_gaps, s.commands_sent);
  if (s.fatal) out += "\nFATAL: " + *s.fatal;
  if (s.connection_error) out += "\nconnection error: " + *s.connection_error;
  return out;
}

SessionSummary run_session(LineChannel& channel, rv::Monitor& monitor,
                           const taint::Scanner& scanner, seal::Sealer& sealer,
                           const SessionOptions& options) {
  SessionSummary s;
  std::optional<std::uint64_t> highest_seq;

  auto send = [&](const Command& c) {
    channel.write(encode_command(c));
    ++s.commands_sent;
  };
  auto fail_closed = [&](const Error& e) {
    s.fatal = fmt::format("{}: {}", to_string(e.code()), e.what());
    try {
      send({CommandKind::Pause, {}});
    } catch (const Error&) {
    }
  };

  try {
    for (;;) {
      auto r = channel.read_line(kMaxLineLength);
      if (r.status == LineChannel::ReadStatus::Eof) break;
      if (r.status == LineChannel::ReadStatus::Oversize) {
        ++s.oversize;
        ++s.rejects;
        continue;
      }
      if (r.status == LineChannel::ReadStatus::Partial) {
        ++s.malformed;
        ++s.rejects;
        break;
      }

      rv::Event event;
      try {
        event = decode_wire(r.line);
      } catch (const Error&) {
        ++s.malformed;
        ++s.rejects;
        continue;
      }
      ++s.events;
      if (highest_seq && event.seq > *highest_seq + 1) ++s.seq_gaps;
      if (!highest_seq || event.seq > *highest_seq) highest_seq = event.seq;

      r.line.push_back('\n');
      try {
        sealer.append_sealed(options.event_log_id, as_bytes(r.line));
      } catch (const Error& e) {
        fail_closed(e);
        break;
      }
      ++s.sealed_events;

      std::vector<rv::Verdict> verdicts;
      try {
        verdicts = monitor.process(event);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::OutOfOrderEvent) {
          ++s.out_of_order;
          ++s.rejects;
          continue;
        }
        fail_closed(e);
        break;
      }
      ++s.processed;

      for (const auto& v : verdicts) {
        ++s.verdicts;
        s.verdict_log.push_back(v);
        if (v.kind == rv::VerdictKind::Violation) {
          ++s.violations;
          send({CommandKind::Flag, v.property_id});
          if (options.pause_on_violation) send({CommandKind::Pause, {}});
        } else if (v.kind == rv::VerdictKind::Recovered && options.pause_on_violation) {
          send({CommandKind::Resume, {}});
        }
      }

      if (event.direction == rv::Direction::Outbound && !event.payload.empty()) {
        auto matches = scanner.scan(event.payload);
        s.taint_matches += matches.size();
        std::set<std::string> flagged;
        for (const auto& m : matches) {
          if (flagged.insert(m.pattern_id).second) send({CommandKind::Flag, "taint:" + m.pattern_id});
        }
      }

      if (options.heartbeat_every != 0 && s.processed % options.heartbeat_every == 0) {
        try {
          s.verdict_log.push_back(monitor.heartbeat());
          ++s.verdicts;
        } catch (const Error& e) {
          fail_closed(e);
          break;
        }
      }
    }
  } catch (const Error& e) {
    s.connection_error = e.what();
  }
  return s;
}

// ---------------------------------------------------------------------------
// Server

BridgeServer::BridgeServer(Endpoint endpoint, std::vector<rv::PropertyAutomaton> automata,
                           taint::Scanner scanner, seal::Sealer& sealer, SessionOptions options,
                           std::uint64_t verdict_log_id)
    : endpoint_(std::move(endpoint)),
      automata_(std::move(automata)),
      scanner_(std::move(scanner)),
      sealer_(sealer),
      options_(options),
      verdict_log_id_(verdict_log_id) {}

BridgeServer::~BridgeServer() {
  stop();
  for (auto& t : workers_) {
    if (t.joinable()) t.join();
  }
}

void BridgeServer::start() {
  if (endpoint_.kind == Endpoint::Kind::Unix) {
    listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd_ < 0) socket_fail("socket");
    ::unlink(endpoint_.path.c_str());
    auto addr = unix_address(endpoint_.path);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) socket_fail("bind");
  } else {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd_ < 0) socket_fail("socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    auto addr = tcp_address(endpoint_);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) socket_fail("bind");
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    endpoint_.port = ntohs(addr.sin_port);
  }
  if (::listen(listen_fd_, 16) != 0) socket_fail("listen");
}

void BridgeServer::handle(int fd) {
  FdChannel channel(fd);
  rv::Monitor monitor(automata_, &sealer_, verdict_log_id_);
  auto summary = run_session(channel, monitor, scanner_, sealer_, options_);
  std::lock_guard lock(mu_);
  summaries_.push_back(std::move(summary));
}

void BridgeServer::serve(std::size_t max_sessions) {
  std::size_t accepted = 0;
  while (!stopping_ && (max_sessions == 0 || accepted < max_sessions)) {
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR && !stopping_) continue;
      break;
    }
    ++accepted;
    workers_.emplace_back([this, fd] { handle(fd); });
  }
  for (auto& t : workers_) {
    if (t.joinable()) t.join();
  }
}

void BridgeServer::stop() {
  if (stopping_.exchange(true)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (endpoint_.kind == Endpoint::Kind::Unix) ::unlink(endpoint_.path.c_str());
}

std::vector<SessionSummary> BridgeServer::summaries() const {
  std::lock_guard lock(mu_);
  return summaries_;
}

// ---------------------------------------------------------------------------
// Client

EventStreamClient::EventStreamClient(const Endpoint& endpoint)
    : channel_(connect_endpoint(endpoint)) {
  reader_ = std::thread([this] {
    try {
      for (;;) {
        auto r = channel_->read_line(kMaxLineLength);
        if (r.status != LineChannel::ReadStatus::Line) break;
        try {
          auto c = decode_command(r.line);
          std::lock_guard lock(mu_);
          commands_.push_back(std::move(c));
        } catch (const Error&) {
        }
      }
    } catch (const Error&) {
    }
  });
}

EventStreamClient::~EventStreamClient() {
  try {
    finish();
  } catch (...) {
  }
}

void EventStreamClient::emit(const rv::Event& event) { channel_->write(encode_wire(event)); }

void EventStreamClient::finish() {
  if (finished_) return;
  finished_ = true;
  channel_->shutdown_write();
  if (reader_.joinable()) reader_.join();
}

std::vector<Command> EventStreamClient::commands() const {
  std::lock_guard lock(mu_);
  return commands_;
}

}  // namespace rvtee::bridge
