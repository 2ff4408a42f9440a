// SPDX-License-Identifier: Apache-2.0
#include "rvtee/taint.hpp"

#include <algorithm>
#include <sstream>
#include <string_view>
#include <tuple>
#include <unordered_map>

#include "rvtee/error.hpp"
#include "rvtee/file.hpp"

namespace rvtee::taint {

SensitivePattern make_pattern(std::string id, Bytes bytes) {
  if (id.empty()) throw Error(ErrorCode::Config, "pattern id must not be empty");
  if (bytes.size() < kMinPatternLength) {
    throw Error(ErrorCode::Config, "pattern '" + id + "' is shorter than 4 octets");
  }
  return {std::move(id), std::move(bytes)};
}

void validate(const TaintConfig& config, std::span<const SensitivePattern> patterns) {
  if (config.stride == 0 || config.stride > config.window_size) {
    throw Error(ErrorCode::Config, "stride must satisfy 1 <= stride <= window_size");
  }
  if (!(config.coarse_threshold > 0.0 && config.coarse_threshold <= 1.0)) {
    throw Error(ErrorCode::Config, "coarse_threshold must be in (0, 1]");
  }
  if (config.qgram_size == 0) throw Error(ErrorCode::Config, "qgram_size must be positive");
  for (const auto& p : patterns) {
    if (config.qgram_size > p.bytes.size()) {
      throw Error(ErrorCode::Config, "qgram_size exceeds length of pattern '" + p.id + "'");
    }
    if (config.max_edit_distance >= p.bytes.size()) {
      throw Error(ErrorCode::Config,
                  "max_edit_distance must be below the length of pattern '" + p.id + "'");
    }
  }
}

namespace {

std::string_view view(ByteView b) {
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

/// Distinct q-grams of the pattern, numbered 0..D-1.
std::unordered_map<std::string_view, std::size_t> pattern_qgrams(ByteView pattern, std::size_t q) {
  std::unordered_map<std::string_view, std::size_t> ids;
  auto text = view(pattern);
  for (std::size_t i = 0; i + q <= text.size(); ++i) ids.emplace(text.substr(i, q), ids.size());
  return ids;
}

}  // namespace

std::vector<Window> coarse_scan(ByteView buffer, const SensitivePattern& pattern,
                                const TaintConfig& config) {
  std::vector<Window> out;
  const std::size_t n = buffer.size();
  const std::size_t q = config.qgram_size;
  if (n == 0 || q == 0 || pattern.bytes.size() < q) return out;

  auto ids = pattern_qgrams(pattern.bytes, q);
  const std::size_t distinct = ids.size();

  // hit[i] = id of the pattern q-gram starting at buffer position i, or npos.
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> hit(n >= q ? n - q + 1 : 0, kNone);
  auto text = view(buffer);
  for (std::size_t i = 0; i < hit.size(); ++i) {
    auto it = ids.find(text.substr(i, q));
    if (it != ids.end()) hit[i] = it->second;
  }

  std::vector<std::size_t> stamp(distinct, kNone);
  for (std::size_t w = 0, idx = 0; w < n; w += config.stride, ++idx) {
    const std::size_t len = std::min(config.window_size, n - w);
    std::size_t present = 0;
    if (len >= q) {
      for (std::size_t i = w; i + q <= w + len; ++i) {
        auto id = hit[i];
        if (id != kNone && stamp[id] != idx) {
          stamp[id] = idx;
          ++present;
        }
      }
    }
    const double share = static_cast<double>(present) / static_cast<double>(distinct);
    if (present > 0 && share + 1e-12 >= config.coarse_threshold) out.push_back({w, len});
    if (w + len >= n) break;
  }
  return out;
}

std::optional<FineMatch> fine_match(ByteView slice, ByteView pattern, std::size_t k) {
  // Column-wise DP over the slice. Each cell holds (cost, start) minimised
  // lexicographically, so the start of the cheapest alignment ending at a
  // column is the leftmost one. Row 0 is free: an alignment may begin anywhere.
  struct Cell {
    std::size_t cost;
    std::size_t start;
    bool operator<(const Cell& o) const { return std::tie(cost, start) < std::tie(o.cost, o.start); }
  };
  const std::size_t m = pattern.size();
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t i = 0; i <= m; ++i) prev[i] = {i, 0};

  std::optional<FineMatch> best;
  auto consider = [&](const Cell& c, std::size_t end) {
    if (c.cost > k) return;
    FineMatch cand{c.cost, c.start, end - c.start};
    if (!best || std::tie(cand.edit_distance, cand.offset, cand.length) <
                     std::tie(best->edit_distance, best->offset, best->length)) {
      best = cand;
    }
  };
  consider(prev[m], 0);

  for (std::size_t j = 1; j <= slice.size(); ++j) {
    cur[0] = {0, j};
    const auto t = slice[j - 1];
    for (std::size_t i = 1; i <= m; ++i) {
      Cell diag{prev[i - 1].cost + (pattern[i - 1] == t ? 0 : 1), prev[i - 1].start};
      Cell left{prev[i].cost + 1, prev[i].start};
      Cell up{cur[i - 1].cost + 1, cur[i - 1].start};
      cur[i] = std::min({diag, left, up});
    }
    consider(cur[m], j);
    std::swap(prev, cur);
  }
  return best;
}

std::vector<TaintMatch> scan(ByteView buffer, std::span<const SensitivePattern> patterns,
                             const TaintConfig& config) {
  validate(config, patterns);
  std::vector<TaintMatch> out;
  const std::size_t n = buffer.size();
  const std::size_t k = config.max_edit_distance;

  for (const auto& pattern : patterns) {
    const std::size_t m = pattern.bytes.size();
    std::vector<std::pair<std::size_t, std::size_t>> regions;
    for (const auto& w : coarse_scan(buffer, pattern, config)) {
      std::size_t lo = w.offset > m ? w.offset - m : 0;
      std::size_t hi = std::min(n, w.offset + w.length + m);
      if (!regions.empty() && lo <= regions.back().second) {
        regions.back().second = std::max(regions.back().second, hi);
      } else {
        regions.emplace_back(lo, hi);
      }
    }

    // Best match splits its region; the two sides are searched independently.
    std::vector<std::pair<std::size_t, std::size_t>> pending(regions.rbegin(), regions.rend());
    while (!pending.empty()) {
      auto [lo, hi] = pending.back();
      pending.pop_back();
      if (hi - lo + k < m) continue;
      auto found = fine_match(buffer.subspan(lo, hi - lo), pattern.bytes, k);
      if (!found) continue;
      const std::size_t a = lo + found->offset;
      const std::size_t b = a + found->length;
      out.push_back({pattern.id, a, found->length, found->edit_distance});
      pending.emplace_back(b, hi);
      pending.emplace_back(lo, a);
    }
  }

  std::sort(out.begin(), out.end(), [](const TaintMatch& x, const TaintMatch& y) {
    return std::tie(x.buffer_offset, x.pattern_id, x.span_length) <
           std::tie(y.buffer_offset, y.pattern_id, y.span_length);
  });
  return out;
}

std::optional<double> recall_threshold(ByteView pattern, std::size_t q, std::size_t k) {
  if (q == 0 || pattern.size() < q) return std::nullopt;
  const auto distinct = static_cast<double>(pattern_qgrams(pattern, q).size());
  const double t = 1.0 - static_cast<double>(k * q) / distinct;
  if (t <= 0.0) return std::nullopt;
  return t;
}

std::vector<SensitivePattern> parse_patterns(std::string_view text) {
  std::vector<SensitivePattern> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(ErrorCode::Config, "patterns line " + std::to_string(lineno) + ": expected id<TAB>hex");
    }
    try {
      out.push_back(make_pattern(line.substr(0, tab), from_hex(line.substr(tab + 1))));
    } catch (const Error& e) {
      throw Error(ErrorCode::Config, "patterns line " + std::to_string(lineno) + ": " + e.what());
    }
    for (std::size_t i = 0; i + 1 < out.size(); ++i) {
      if (out[i].id == out.back().id) {
        throw Error(ErrorCode::Config, "patterns line " + std::to_string(lineno) + ": duplicate id");
      }
    }
  }
  return out;
}

std::vector<SensitivePattern> load_patterns(const std::filesystem::path& path) {
  return parse_patterns(read_text_file(path));
}

Scanner::Scanner(std::vector<SensitivePattern> patterns, TaintConfig config)
    : patterns_(std::move(patterns)), config_(config) {
  validate(config_, patterns_);
}

std::vector<TaintMatch> Scanner::scan(ByteView buffer) const {
  if (patterns_.empty()) return {};
  return taint::scan(buffer, patterns_, config_);
}

}  // namespace rvtee::taint
