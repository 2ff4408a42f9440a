// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rvtee/bytes.hpp"

namespace rvtee::taint {

inline constexpr std::size_t kMinPatternLength = 4;

struct SensitivePattern {
  std::string id;
  Bytes bytes;
};

/// Throws Error(Config) for an empty id or a pattern shorter than 4 octets.
SensitivePattern make_pattern(std::string id, Bytes bytes);

struct TaintConfig {
  std::size_t window_size = 1024;
  std::size_t stride = 512;
  double coarse_threshold = 0.5;  // fraction of distinct pattern q-grams
  std::size_t max_edit_distance = 2;
  std::size_t qgram_size = 4;
};

/// Throws Error(Config) unless 1 <= stride <= window_size,
/// 0 < coarse_threshold <= 1, 1 <= qgram_size <= shortest pattern and
/// max_edit_distance < shortest pattern.
void validate(const TaintConfig& config, std::span<const SensitivePattern> patterns);

struct Window {
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const Window&, const Window&) = default;
};

/// Windows of window_size at multiples of stride (the last one may be
/// shorter) whose share of the pattern's distinct q-grams meets the threshold.
std::vector<Window> coarse_scan(ByteView buffer, const SensitivePattern& pattern,
                                const TaintConfig& config);

struct FineMatch {
  std::size_t edit_distance = 0;
  std::size_t offset = 0;  // relative to the slice
  std::size_t length = 0;

  friend bool operator==(const FineMatch&, const FineMatch&) = default;
};

/// Minimum Levenshtein distance between pattern and any substring of slice,
/// if it is <= k. Ties prefer the leftmost start, then the shortest span.
std::optional<FineMatch> fine_match(ByteView slice, ByteView pattern, std::size_t k);

struct TaintMatch {
  std::string pattern_id;
  std::size_t buffer_offset = 0;
  std::size_t span_length = 0;
  std::size_t edit_distance = 0;

  friend bool operator==(const TaintMatch&, const TaintMatch&) = default;
};

/// Coarse filter per pattern, then exact approximate matching over the
/// candidate windows padded by the pattern length on both sides. For each
/// pattern the result is the greedy non-overlapping selection ordered by
/// (distance, offset, length). Output is sorted by (offset, pattern_id, length).
std::vector<TaintMatch> scan(ByteView buffer, std::span<const SensitivePattern> patterns,
                             const TaintConfig& config);

/// Largest coarse threshold that cannot reject a window containing a match
/// within k edits: 1 - k*q / (distinct q-grams). nullopt when no positive
/// threshold gives that guarantee. Full recall additionally needs
/// window_size >= stride + |pattern| + k - 1.
std::optional<double> recall_threshold(ByteView pattern, std::size_t q, std::size_t k);

/// Pattern registry lines "id<TAB>hex-bytes"; '#' comments and blank lines
/// ignored. Throws Error(Config) with the line number.
std::vector<SensitivePattern> parse_patterns(std::string_view text);
std::vector<SensitivePattern> load_patterns(const std::filesystem::path& path);

class Scanner {
 public:
  Scanner() = default;
  Scanner(std::vector<SensitivePattern> patterns, TaintConfig config);

  std::vector<TaintMatch> scan(ByteView buffer) const;
  const std::vector<SensitivePattern>& patterns() const noexcept { return patterns_; }
  const TaintConfig& config() const noexcept { return config_; }

 private:
  std::vector<SensitivePattern> patterns_;
  TaintConfig config_;
};

}  // namespace rvtee::taint
