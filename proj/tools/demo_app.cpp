// SPDX-License-Identifier: Apache-2.0
// Scripted three-party chat. Client 1 streams its boundary events to the
// bridge named by RVTEE_BRIDGE_ENDPOINT when that variable is set.
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "rvtee/bridge.hpp"
#include "rvtee/error.hpp"
#include "rvtee/fixture.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Scripted chat fixture"};
  app.name("rvtee-demo-app");
  std::string scenario = "A";
  std::size_t clients = 3;
  std::uint64_t pause_ms = 20;
  app.add_option("--scenario", scenario, "A (client 1 creates the room) or B (client 1 joins)")
      ->capture_default_str();
  app.add_option("--clients", clients, "Number of chat clients")->capture_default_str();
  app.add_option("--pause-ms", pause_ms, "Think time between scripted lines")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  rvtee::fixture::ChatOptions options;
  auto s = rvtee::fixture::parse_scenario(scenario);
  if (!s) {
    std::cerr << "unknown scenario '" << scenario << "'\n";
    return 2;
  }
  options.scenario = *s;
  options.clients = clients;
  options.pause = std::chrono::milliseconds(pause_ms);
  try {
    if (const char* ep = std::getenv(rvtee::bridge::kEndpointEnv); ep && *ep) {
      options.instrument = rvtee::bridge::parse_endpoint(ep);
    }
    auto result = rvtee::fixture::run_chat(options);
    std::cout << fmt::format("scenario {}: {:.3f} s, {} messages relayed, {} events streamed\n",
                             scenario, result.seconds, result.messages_relayed,
                             result.events_emitted);
    for (const auto& c : result.commands) std::cout << "command: " << rvtee::bridge::encode_command(c);
  } catch (const rvtee::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
