// SPDX-License-Identifier: Apache-2.0
#include "rvtee/rvmon.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <map>
#include <set>

namespace rvtee::rv {

std::string_view to_string(Boundary b) { return b == Boundary::RaTee ? "ra_tee" : "ra_ree"; }
std::string_view to_string(Direction d) { return d == Direction::Inbound ? "in" : "out"; }

std::optional<Boundary> parse_boundary(std::string_view s) {
  if (s == "ra_tee") return Boundary::RaTee;
  if (s == "ra_ree") return Boundary::RaRee;
  return std::nullopt;
}

std::optional<Direction> parse_direction(std::string_view s) {
  if (s == "in") return Direction::Inbound;
  if (s == "out") return Direction::Outbound;
  return std::nullopt;
}

std::string_view to_string(VerdictKind k) {
  switch (k) {
    case VerdictKind::Violation: return "violation";
    case VerdictKind::Recovered: return "recovered";
    case VerdictKind::Heartbeat: return "heartbeat";
  }
  return "unknown";
}

bool Guard::matches(const Event& e) const {
  if (boundary && *boundary != e.boundary) return false;
  if (direction && *direction != e.direction) return false;
  if (channel && *channel != e.channel) return false;
  if (payload_regex) {
    const auto* begin = reinterpret_cast<const char*>(e.payload.data());
    if (!std::regex_search(begin, begin + e.payload.size(), *payload_regex)) return false;
  }
  return true;
}

std::optional<StateId> PropertyAutomaton::state_index(std::string_view name) const {
  auto it = std::find(states.begin(), states.end(), name);
  if (it == states.end()) return std::nullopt;
  return static_cast<StateId>(it - states.begin());
}

// ---------------------------------------------------------------------------
// Spec parsing

namespace {

struct Token {
  std::string text;
  std::size_t column = 0;  // 1-based
};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

std::vector<Token> split_tokens(std::string_view line, std::size_t start) {
  std::vector<Token> out;
  std::size_t i = start;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    out.push_back({std::string(line.substr(i, j - i)), i + 1});
    i = j;
  }
  return out;
}

bool valid_identifier(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' || c == ':';
  });
}

struct PendingTransition {
  Token from;
  Token to;
  Guard guard;
  std::size_t line = 0;
};

struct PendingProperty {
  std::string id;
  std::size_t line = 0;
  std::optional<std::vector<Token>> states;
  std::optional<Token> initial;
  std::vector<Token> violation;
  std::size_t states_line = 0;
  std::size_t violation_line = 0;
  std::vector<PendingTransition> transitions;
};

[[noreturn]] void semantic(std::size_t line, const std::string& msg) {
  throw Error(ErrorCode::Semantic, "line " + std::to_string(line) + ": " + msg);
}

PropertyAutomaton finish(PendingProperty& p, std::vector<std::string>& warnings) {
  if (!p.states) semantic(p.line, "property '" + p.id + "' declares no states");
  if (!p.initial) semantic(p.line, "property '" + p.id + "' declares no initial state");

  PropertyAutomaton a;
  a.id = p.id;
  for (const auto& t : *p.states) {
    if (a.state_index(t.text)) semantic(p.states_line, "duplicate state '" + t.text + "'");
    a.states.push_back(t.text);
  }
  a.violation.assign(a.states.size(), false);

  auto resolve = [&](const Token& t, std::size_t line) {
    auto idx = a.state_index(t.text);
    if (!idx) semantic(line, "undeclared state '" + t.text + "' in property '" + p.id + "'");
    return *idx;
  };
  a.initial = resolve(*p.initial, p.line);
  for (const auto& v : p.violation) a.violation[resolve(v, p.violation_line)] = true;
  for (auto& pt : p.transitions) {
    a.transitions.push_back({resolve(pt.from, pt.line), std::move(pt.guard), resolve(pt.to, pt.line)});
  }

  std::vector<bool> reached(a.states.size(), false);
  std::deque<StateId> queue{a.initial};
  reached[a.initial] = true;
  while (!queue.empty()) {
    auto s = queue.front();
    queue.pop_front();
    for (const auto& t : a.transitions) {
      if (t.from == s && !reached[t.to]) {
        reached[t.to] = true;
        queue.push_back(t.to);
      }
    }
  }
  for (StateId s = 0; s < a.states.size(); ++s) {
    if (a.violation[s] && !reached[s]) {
      warnings.push_back("property '" + a.id + "': violation state '" + a.states[s] +
                         "' is unreachable");
    }
  }
  return a;
}

Guard parse_guard(const std::string& spec, std::size_t lineno, std::size_t column) {
  auto first = spec.find('/');
  auto last = spec.rfind('/');
  if (first == std::string::npos || first == last) {
    throw ParseError(lineno, column, "guard must be <boundary>/<channel>/<direction>");
  }
  auto b = spec.substr(0, first);
  auto c = spec.substr(first + 1, last - first - 1);
  auto d = spec.substr(last + 1);
  Guard g;
  if (b != "*") {
    g.boundary = parse_boundary(b);
    if (!g.boundary) throw ParseError(lineno, column, "unknown boundary '" + b + "'");
  }
  if (c.empty()) throw ParseError(lineno, column + first + 1, "empty channel");
  if (c != "*") g.channel = c;
  if (d != "*") {
    g.direction = parse_direction(d);
    if (!g.direction) throw ParseError(lineno, column + last + 1, "unknown direction '" + d + "'");
  }
  return g;
}

}  // namespace

SpecLoadResult load_spec(std::string_view text) {
  SpecLoadResult result;
  std::vector<PendingProperty> props;
  std::set<std::string> ids;

  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;

    auto tokens = split_tokens(line, 0);
    if (tokens.empty() || tokens[0].text[0] == '#') continue;
    const auto& head = tokens[0];

    if (head.text == "property") {
      if (tokens.size() != 2 || !valid_identifier(tokens[1].text)) {
        throw ParseError(lineno, tokens.size() > 1 ? tokens[1].column : head.column + head.text.size(),
                         "expected 'property <id>'");
      }
      if (!ids.insert(tokens[1].text).second) {
        semantic(lineno, "duplicate property id '" + tokens[1].text + "'");
      }
      PendingProperty p;
      p.id = tokens[1].text;
      p.line = lineno;
      props.push_back(std::move(p));
      continue;
    }
    if (props.empty()) throw ParseError(lineno, head.column, "statement outside of a property block");
    auto& cur = props.back();

    auto check_names = [&](const std::vector<Token>& names) {
      for (const auto& t : names) {
        if (!valid_identifier(t.text)) throw ParseError(lineno, t.column, "invalid state name '" + t.text + "'");
      }
    };

    if (head.text == "states:") {
      if (cur.states) semantic(lineno, "states declared twice");
      std::vector<Token> names(tokens.begin() + 1, tokens.end());
      if (names.empty()) throw ParseError(lineno, head.column + head.text.size(), "expected at least one state");
      check_names(names);
      cur.states = std::move(names);
      cur.states_line = lineno;
    } else if (head.text == "initial:") {
      if (tokens.size() != 2) throw ParseError(lineno, head.column, "expected 'initial: <state>'");
      if (cur.initial) semantic(lineno, "initial declared twice");
      check_names({tokens[1]});
      cur.initial = tokens[1];
    } else if (head.text == "violation:") {
      std::vector<Token> names(tokens.begin() + 1, tokens.end());
      check_names(names);
      cur.violation.insert(cur.violation.end(), names.begin(), names.end());
      cur.violation_line = lineno;
    } else if (tokens.size() >= 5 && tokens[1].text == "->") {
      if (tokens[3].text != "on") throw ParseError(lineno, tokens[3].column, "expected 'on'");
      PendingTransition t;
      t.from = tokens[0];
      t.to = tokens[2];
      t.line = lineno;
      check_names({t.from, t.to});
      t.guard = parse_guard(tokens[4].text, lineno, tokens[4].column);
      if (tokens.size() > 5) {
        if (tokens[5].text != "payload" || tokens.size() < 8 || tokens[6].text != "~") {
          throw ParseError(lineno, tokens[5].column, "expected 'payload ~ <regex>'");
        }
        // The regex is the raw remainder of the line after "~ ".
        std::size_t start = tokens[7].column - 1;
        std::string_view rx = line.substr(start);
        while (!rx.empty() && is_space(rx.back())) rx.remove_suffix(1);
        t.guard.payload_pattern = std::string(rx);
        try {
          t.guard.payload_regex = std::make_shared<const std::regex>(
              t.guard.payload_pattern, std::regex::ECMAScript | std::regex::optimize);
        } catch (const std::regex_error& e) {
          throw ParseError(lineno, tokens[7].column, std::string("invalid payload regex: ") + e.what());
        }
      }
      cur.transitions.push_back(std::move(t));
    } else {
      throw ParseError(lineno, head.column, "unrecognised statement '" + head.text + "'");
    }
  }

  for (auto& p : props) result.automata.push_back(finish(p, result.warnings));
  return result;
}

// ---------------------------------------------------------------------------

std::string serialize_verdict(const Verdict& v) {
  std::string out = v.property_id;
  out += '\t';
  out += std::to_string(v.event_seq);
  out += '\t';
  out += to_string(v.kind);
  out += '\n';
  return out;
}

StepResult step(const PropertyAutomaton& automaton, StateId current, const Event& event) {
  StepResult r{current, std::nullopt};
  for (const auto& t : automaton.transitions) {
    if (t.from == current && t.guard.matches(event)) {
      r.next = t.to;
      break;
    }
  }
  const bool was_bad = automaton.is_violation(current);
  const bool is_bad = automaton.is_violation(r.next);
  if (is_bad && !was_bad) {
    r.verdict = Verdict{automaton.id, event.seq, VerdictKind::Violation};
  } else if (was_bad && !is_bad) {
    r.verdict = Verdict{automaton.id, event.seq, VerdictKind::Recovered};
  }
  return r;
}

Monitor::Monitor(std::vector<PropertyAutomaton> automata, seal::Sealer* sealer,
                 std::uint64_t verdict_log_id)
    : automata_(std::move(automata)), sealer_(sealer), verdict_log_id_(verdict_log_id) {
  states_.reserve(automata_.size());
  for (const auto& a : automata_) states_.push_back(a.initial);
}

void Monitor::seal(const Verdict& v) {
  if (!sealer_) return;
  try {
    sealer_->append_sealed(verdict_log_id_, as_bytes(serialize_verdict(v)));
  } catch (const Error& e) {
    halted_ = e.code();
    throw;
  }
}

std::vector<Verdict> Monitor::process(const Event& event) {
  if (halted_) throw Error(*halted_, "monitor halted after a sealing failure");
  if (last_seq_ && event.seq <= *last_seq_) {
    ++rejected_;
    throw Error(ErrorCode::OutOfOrderEvent, "event seq " + std::to_string(event.seq) +
                                                " is not after " + std::to_string(*last_seq_));
  }

  std::vector<StateId> next(states_.size());
  std::vector<Verdict> verdicts;
  for (std::size_t i = 0; i < automata_.size(); ++i) {
    auto r = step(automata_[i], states_[i], event);
    next[i] = r.next;
    if (r.verdict) verdicts.push_back(std::move(*r.verdict));
  }
  for (const auto& v : verdicts) seal(v);

  states_ = std::move(next);
  last_seq_ = event.seq;
  ++processed_;
  return verdicts;
}

Verdict Monitor::heartbeat() {
  if (halted_) throw Error(*halted_, "monitor halted after a sealing failure");
  Verdict v{"monitor", last_seq_.value_or(0), VerdictKind::Heartbeat};
  seal(v);
  return v;
}

}  // namespace rvtee::rv
