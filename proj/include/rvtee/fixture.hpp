// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>

#include "rvtee/bridge.hpp"

namespace rvtee::fixture {

/// A: client 1 creates the room (initiator). B: client 1 joins a room that
/// client 2 created.
enum class Scenario { A, B };

std::string to_string(Scenario s);
std::optional<Scenario> parse_scenario(std::string_view text);

struct ChatOptions {
  Scenario scenario = Scenario::A;
  std::size_t clients = 3;
  std::chrono::milliseconds pause{20};  // think time between scripted lines
  /// When set, client 1 streams its boundary events to this bridge.
  std::optional<bridge::Endpoint> instrument;
};

struct ChatResult {
  double seconds = 0;
  std::uint64_t messages_relayed = 0;
  std::uint64_t events_emitted = 0;
  std::vector<bridge::Command> commands;  // received by client 1
};

/// Number of scripted lines client `id` sends in a scenario.
std::size_t script_length(Scenario scenario, std::size_t id);

/// Runs a relay server and `clients` scripted chat clients on local socket
/// pairs. Each client performs hello/keyex with the server, waits for the room
/// when it is a joiner, then sends its scripted lines with pauses.
/// Throws Error(Io) when any participant fails.
ChatResult run_chat(const ChatOptions& options);

}  // namespace rvtee::fixture
