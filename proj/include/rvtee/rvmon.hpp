// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "rvtee/bytes.hpp"
#include "rvtee/error.hpp"
#include "rvtee/seallog.hpp"

namespace rvtee::rv {

enum class Boundary { RaTee, RaRee };
enum class Direction { Inbound, Outbound };

std::string_view to_string(Boundary b);
std::string_view to_string(Direction d);
std::optional<Boundary> parse_boundary(std::string_view s);
std::optional<Direction> parse_direction(std::string_view s);

/// One observation at the RA-TEE or RA-REE boundary.
struct Event {
  std::uint64_t seq = 0;
  std::int64_t timestamp = 0;  // ns since epoch
  Boundary boundary = Boundary::RaRee;
  std::string channel;
  Direction direction = Direction::Outbound;
  Bytes payload;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Predicate over (boundary, channel, direction) plus an optional payload
/// regex. Unset components match anything.
struct Guard {
  std::optional<Boundary> boundary;
  std::optional<std::string> channel;
  std::optional<Direction> direction;
  std::string payload_pattern;
  std::shared_ptr<const std::regex> payload_regex;

  bool matches(const Event& e) const;
};

using StateId = std::size_t;

struct Transition {
  StateId from = 0;
  Guard guard;
  StateId to = 0;
};

struct PropertyAutomaton {
  std::string id;
  std::vector<std::string> states;
  StateId initial = 0;
  std::vector<Transition> transitions;  // first match in this order wins
  std::vector<bool> violation;          // indexed by StateId

  bool is_violation(StateId s) const { return violation.at(s); }
  std::optional<StateId> state_index(std::string_view name) const;
};

struct SpecLoadResult {
  std::vector<PropertyAutomaton> automata;
  std::vector<std::string> warnings;
};

/// Parses a property document:
///
///   property <id>
///   states: s0 s1 ...
///   initial: s0
///   violation: sV ...
///   s_from -> s_to on <boundary>/<channel>/<direction> [payload ~ <regex>]
///
/// boundary is ra_tee|ra_ree|*, direction is in|out|*, channel is a name or *.
/// Full-line '#' comments are ignored. Throws ParseError (with line/column) or
/// Error(Semantic); an unreachable violation state is only a warning.
SpecLoadResult load_spec(std::string_view text);

enum class VerdictKind { Violation, Recovered, Heartbeat };
std::string_view to_string(VerdictKind k);

struct Verdict {
  std::string property_id;
  std::uint64_t event_seq = 0;
  VerdictKind kind = VerdictKind::Violation;

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

/// "property_id<TAB>event_seq<TAB>kind\n"
std::string serialize_verdict(const Verdict& v);

struct StepResult {
  StateId next = 0;
  std::optional<Verdict> verdict;
};

/// Pure transition function; a violation verdict is produced only on entry.
StepResult step(const PropertyAutomaton& automaton, StateId current, const Event& event);

/// Deterministic fold of an ordered event stream over a set of automata.
/// Verdicts are sealed through the sealer (when given) before process()
/// returns; a sealing failure halts the monitor.
class Monitor {
 public:
  static constexpr std::uint64_t kDefaultVerdictLog = 2;

  explicit Monitor(std::vector<PropertyAutomaton> automata, seal::Sealer* sealer = nullptr,
                   std::uint64_t verdict_log_id = kDefaultVerdictLog);

  /// Throws Error(OutOfOrderEvent) when event.seq does not exceed the last
  /// accepted seq; the event is counted in rejected() and changes nothing.
  std::vector<Verdict> process(const Event& event);

  /// Seals a liveness verdict tagged with the last accepted seq.
  Verdict heartbeat();

  std::uint64_t rejected() const noexcept { return rejected_; }
  std::uint64_t processed() const noexcept { return processed_; }
  std::optional<std::uint64_t> last_seq() const noexcept { return last_seq_; }
  const std::vector<StateId>& states() const noexcept { return states_; }
  const std::vector<PropertyAutomaton>& automata() const noexcept { return automata_; }
  bool halted() const noexcept { return halted_.has_value(); }

 private:
  void seal(const Verdict& v);

  std::vector<PropertyAutomaton> automata_;
  std::vector<StateId> states_;
  seal::Sealer* sealer_;
  std::uint64_t verdict_log_id_;
  std::optional<std::uint64_t> last_seq_;
  std::uint64_t rejected_ = 0;
  std::uint64_t processed_ = 0;
  std::optional<ErrorCode> halted_;
};

}  // namespace rvtee::rv
