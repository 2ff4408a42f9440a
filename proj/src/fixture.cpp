// SPDX-License-Identifier: Apache-2.0
#include "rvtee/fixture.hpp"

#include <sys/socket.h>

#include <cerrno>
#include <cstring>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "rvtee/error.hpp"

namespace rvtee::fixture {

namespace {

using bridge::FdChannel;
using Clock = std::chrono::steady_clock;

std::size_t initiator_of(Scenario s) { return s == Scenario::A ? 1 : 2; }

class RelayServer {
 public:
  explicit RelayServer(std::size_t clients) : expected_(clients) {}

  void attach(std::size_t id, FdChannel* channel) { channels_[id] = channel; }

  // One thread per client connection; all writes happen under mu_ so lines
  // from different handlers never interleave.
  void handle(std::size_t id) {
    try {
      serve(id);
    } catch (const Error&) {
    }
    std::lock_guard lock(mu_);
    if (!said_bye_.contains(id)) {
      // A participant vanished: end the session for everyone.
      for (auto& [j, c] : channels_) c->shutdown_write();
    }
  }

  std::uint64_t relayed() const {
    std::lock_guard lock(mu_);
    return relayed_;
  }

 private:
  void serve(std::size_t id) {
    FdChannel& ch = *channels_.at(id);
    for (;;) {
      auto r = ch.read_line();
      if (r.status != FdChannel::ReadStatus::Line) return;
      std::string_view line = r.line;
      std::lock_guard lock(mu_);
      if (line.starts_with("HELLO ")) {
        ch.write(fmt::format("KEYEX {:016x}\n", 0x9e3779b97f4a7c15ULL * (id + 1)));
      } else if (line == "CREATE") {
        room_open_ = true;
        joined_.insert(id);
        ch.write("ROOM\n");
        for (auto w : waiting_) {
          joined_.insert(w);
          channels_.at(w)->write("ROOM\n");
        }
        waiting_.clear();
      } else if (line == "JOIN") {
        if (room_open_) {
          joined_.insert(id);
          ch.write("ROOM\n");
        } else {
          waiting_.insert(id);
        }
      } else if (line.starts_with("MSG ")) {
        ++relayed_;
        std::string out = std::string(line) + "\n";
        for (auto j : joined_) {
          if (j != id) channels_.at(j)->write(out);
        }
      } else if (line.starts_with("BYE ")) {
        said_bye_.insert(id);
        if (said_bye_.size() == expected_) {
          for (auto& [j, c] : channels_) {
            c->write("END\n");
            c->shutdown_write();
          }
        }
      }
    }
  }

  std::size_t expected_;
  std::map<std::size_t, FdChannel*> channels_;
  mutable std::mutex mu_;
  bool room_open_ = false;
  std::set<std::size_t> joined_;
  std::set<std::size_t> waiting_;
  std::set<std::size_t> said_bye_;
  std::uint64_t relayed_ = 0;
};

// Client 1's instrumentation hook: every protocol send/receive becomes a
// boundary event on the bridge connection.
class Probe {
 public:
  explicit Probe(const std::optional<bridge::Endpoint>& endpoint) {
    if (endpoint) client_ = std::make_unique<bridge::EventStreamClient>(*endpoint);
  }

  void emit(rv::Boundary b, const char* channel, rv::Direction d, std::string_view payload) {
    if (!client_) return;
    std::lock_guard lock(mu_);
    rv::Event e;
    e.seq = ++seq_;
    e.timestamp = std::chrono::duration_cast<std::chrono::nanoseconds>(
                      Clock::now().time_since_epoch())
                      .count();
    e.boundary = b;
    e.channel = channel;
    e.direction = d;
    e.payload.assign(payload.begin(), payload.end());
    client_->emit(e);
  }

  std::vector<bridge::Command> finish() {
    if (!client_) return {};
    client_->finish();
    return client_->commands();
  }

  std::uint64_t emitted() const { return seq_; }

 private:
  std::unique_ptr<bridge::EventStreamClient> client_;
  std::mutex mu_;
  std::uint64_t seq_ = 0;
};

std::string expect_line(FdChannel& ch, std::string_view prefix) {
  auto r = ch.read_line();
  if (r.status != FdChannel::ReadStatus::Line || !std::string_view(r.line).starts_with(prefix)) {
    throw Error(ErrorCode::Io, fmt::format("chat client expected '{}'", prefix));
  }
  return r.line;
}

void run_client(std::size_t id, const ChatOptions& options, FdChannel& ch, Probe* probe) {
  using rv::Boundary;
  using rv::Direction;
  auto out = [&](Boundary b, const char* channel, const std::string& line) {
    if (probe) probe->emit(b, channel, Direction::Outbound, line);
    ch.write(line + "\n");
  };
  auto in = [&](Boundary b, const char* channel, const std::string& line) {
    if (probe) probe->emit(b, channel, Direction::Inbound, line);
  };

  const bool initiator = id == initiator_of(options.scenario);

  out(Boundary::RaRee, "hello", fmt::format("HELLO {}", id));
  in(Boundary::RaTee, "keyex", expect_line(ch, "KEYEX "));
  out(Boundary::RaRee, "room", initiator ? "CREATE" : "JOIN");
  in(Boundary::RaRee, "room", expect_line(ch, "ROOM"));

  std::exception_ptr reader_error;
  std::thread reader([&] {
    try {
      for (;;) {
        auto r = ch.read_line();
        if (r.status != FdChannel::ReadStatus::Line || r.line == "END") return;
        in(Boundary::RaRee, "data", r.line);
      }
    } catch (...) {
      reader_error = std::current_exception();
    }
  });

  std::exception_ptr writer_error;
  try {
    auto lines = script_length(options.scenario, id);
    for (std::size_t i = 0; i < lines; ++i) {
      std::this_thread::sleep_for(options.pause);
      out(Boundary::RaRee, "data", fmt::format("MSG {} line {} of {}", id, i + 1, lines));
    }
    ch.write(fmt::format("BYE {}\n", id));
  } catch (...) {
    writer_error = std::current_exception();
    ch.shutdown_write();
  }
  reader.join();
  if (writer_error) std::rethrow_exception(writer_error);
  if (reader_error) std::rethrow_exception(reader_error);
}

}  // namespace

std::string to_string(Scenario s) { return s == Scenario::A ? "A" : "B"; }

std::optional<Scenario> parse_scenario(std::string_view text) {
  if (text == "A" || text == "a") return Scenario::A;
  if (text == "B" || text == "b") return Scenario::B;
  return std::nullopt;
}

std::size_t script_length(Scenario scenario, std::size_t id) {
  if (scenario == Scenario::A) return id == 1 ? 12 : 6;
  return id == 1 ? 8 : 6;
}

ChatResult run_chat(const ChatOptions& options) {
  if (options.clients < 2) throw Error(ErrorCode::Config, "chat fixture needs at least 2 clients");

  std::vector<std::unique_ptr<FdChannel>> server_side;
  std::vector<std::unique_ptr<FdChannel>> client_side;
  RelayServer server(options.clients);
  for (std::size_t id = 1; id <= options.clients; ++id) {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
      throw Error(ErrorCode::Io, std::string("socketpair: ") + std::strerror(errno));
    }
    server_side.push_back(std::make_unique<FdChannel>(fds[0]));
    client_side.push_back(std::make_unique<FdChannel>(fds[1]));
    server.attach(id, server_side.back().get());
  }

  auto start = Clock::now();
  Probe probe(options.instrument);

  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(options.clients);
  for (std::size_t id = 1; id <= options.clients; ++id) {
    threads.emplace_back([&server, id] { server.handle(id); });
  }
  std::vector<std::thread> clients;
  for (std::size_t id = 1; id <= options.clients; ++id) {
    clients.emplace_back([&, id] {
      try {
        run_client(id, options, *client_side[id - 1], id == 1 ? &probe : nullptr);
      } catch (...) {
        errors[id - 1] = std::current_exception();
      }
      client_side[id - 1]->shutdown_write();
    });
  }
  for (auto& t : clients) t.join();
  for (auto& ch : server_side) ch->shutdown_write();
  for (auto& t : threads) t.join();

  ChatResult result;
  result.commands = probe.finish();
  result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  result.messages_relayed = server.relayed();
  result.events_emitted = probe.emitted();

  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return result;
}

}  // namespace rvtee::fixture
