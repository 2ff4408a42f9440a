// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "rvtee/error.hpp"
#include "rvtee/taint.hpp"
#include "support.hpp"

using namespace rvtee;
using taint::SensitivePattern;
using taint::TaintConfig;
using taint::TaintMatch;

namespace {

std::size_t levenshtein(ByteView a, ByteView b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Every substring, plain Levenshtein each time; leftmost then shortest.
std::optional<taint::FineMatch> brute_fine(ByteView slice, ByteView pattern, std::size_t k) {
  std::optional<taint::FineMatch> best;
  for (std::size_t i = 0; i <= slice.size(); ++i) {
    for (std::size_t len = 0; i + len <= slice.size(); ++len) {
      auto d = levenshtein(pattern, slice.subspan(i, len));
      if (d > k) continue;
      if (!best || d < best->edit_distance) best = taint::FineMatch{d, i, len};
    }
  }
  return best;
}

// All (distance, start, length) with distance <= k, then greedy
// non-overlapping selection in that order.
std::vector<TaintMatch> brute_scan(ByteView buf, const std::vector<SensitivePattern>& patterns,
                                   std::size_t k) {
  std::vector<TaintMatch> out;
  for (const auto& p : patterns) {
    const std::size_t m = p.bytes.size();
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> cands;
    for (std::size_t s = 0; s < buf.size(); ++s) {
      for (std::size_t len = m > k ? m - k : 1; len <= m + k && s + len <= buf.size(); ++len) {
        auto d = levenshtein(p.bytes, buf.subspan(s, len));
        if (d <= k) cands.emplace_back(d, s, len);
      }
    }
    std::sort(cands.begin(), cands.end());
    std::vector<std::pair<std::size_t, std::size_t>> taken;
    for (auto [d, s, len] : cands) {
      bool clash = false;
      for (auto [ts, tl] : taken) clash |= s < ts + tl && ts < s + len;
      if (clash) continue;
      taken.emplace_back(s, len);
      out.push_back({p.id, s, len, d});
    }
  }
  std::sort(out.begin(), out.end(), [](const TaintMatch& a, const TaintMatch& b) {
    return std::tie(a.buffer_offset, a.pattern_id, a.span_length) <
           std::tie(b.buffer_offset, b.pattern_id, b.span_length);
  });
  return out;
}

Bytes mutate(std::mt19937_64& rng, Bytes p, std::size_t edits) {
  for (std::size_t e = 0; e < edits; ++e) {
    auto pos = rng() % p.size();
    switch (rng() % 3) {
      case 0: p[pos] ^= static_cast<std::uint8_t>(1 + rng() % 255); break;
      case 1: p.erase(p.begin() + static_cast<std::ptrdiff_t>(pos)); break;
      default: p.insert(p.begin() + static_cast<std::ptrdiff_t>(pos), static_cast<std::uint8_t>(rng()));
    }
  }
  return p;
}

Bytes lowercase_noise(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>('a' + rng() % 26);
  return b;
}

TaintConfig permissive(const std::vector<SensitivePattern>& ps, std::size_t k, std::size_t q,
                       std::size_t w, std::size_t s) {
  TaintConfig c;
  c.window_size = w;
  c.stride = s;
  c.max_edit_distance = k;
  c.qgram_size = q;
  double t = 1.0;
  for (const auto& p : ps) t = std::min(t, *taint::recall_threshold(p.bytes, q, k));
  c.coarse_threshold = t;
  return c;
}

}  // namespace

Bytes B(std::string_view s) { return Bytes(s.begin(), s.end()); }

TEST(Pattern, Validation) {
  EXPECT_THROW(taint::make_pattern("short", B("abc")), Error);
  EXPECT_THROW(taint::make_pattern("", B("abcd")), Error);
  EXPECT_NO_THROW(taint::make_pattern("ok", B("abcd")));

  std::vector<SensitivePattern> ps{taint::make_pattern("p", B("abcdef"))};
  TaintConfig c;
  c.qgram_size = 3;
  EXPECT_NO_THROW(taint::validate(c, ps));
  auto bad = c;
  bad.stride = 0;
  EXPECT_THROW(taint::validate(bad, ps), Error);
  bad = c;
  bad.stride = c.window_size + 1;
  EXPECT_THROW(taint::validate(bad, ps), Error);
  bad = c;
  bad.coarse_threshold = 0;
  EXPECT_THROW(taint::validate(bad, ps), Error);
  bad = c;
  bad.coarse_threshold = 1.5;
  EXPECT_THROW(taint::validate(bad, ps), Error);
  bad = c;
  bad.qgram_size = 7;
  EXPECT_THROW(taint::validate(bad, ps), Error);
  bad = c;
  bad.max_edit_distance = 6;
  EXPECT_THROW(taint::validate(bad, ps), Error);
}

TEST(Patterns, ParseFile) {
  auto ps = taint::parse_patterns("# secrets\nkey\t00010203\n\ntok\t746f6b656e\n");
  ASSERT_EQ(ps.size(), 2u);
  EXPECT_EQ(ps[0].id, "key");
  EXPECT_EQ(ps[0].bytes, (Bytes{0, 1, 2, 3}));
  EXPECT_EQ(to_string(ps[1].bytes), "token");
  EXPECT_THROW(taint::parse_patterns("key 0001\n"), Error);
  EXPECT_THROW(taint::parse_patterns("key\tzz\n"), Error);
  EXPECT_THROW(taint::parse_patterns("key\t0001\n"), Error);
  EXPECT_THROW(taint::parse_patterns("a\t00010203\na\t00010203\n"), Error);
}

TEST(CoarseScan, Examples) {
  auto p = taint::make_pattern("p", B("SECRETKEY"));
  TaintConfig c;
  c.coarse_threshold = 1.0;
  auto w = taint::coarse_scan(p.bytes, p, c);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0], (taint::Window{0, 9}));
  EXPECT_TRUE(taint::coarse_scan({}, p, c).empty());
}

// Oracle: count the pattern's distinct q-grams present in every window.
TEST(CoarseScan, MatchesQgramCountOracle) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 40; ++t) {
    auto p = taint::make_pattern("p", lowercase_noise(rng, 8 + rng() % 12));
    Bytes buf = lowercase_noise(rng, 64 * 1024);
    auto at = rng() % (buf.size() - p.bytes.size());
    std::copy(p.bytes.begin(), p.bytes.end(), buf.begin() + static_cast<std::ptrdiff_t>(at));
    TaintConfig c;
    c.qgram_size = 4;
    c.coarse_threshold = 0.5;
    c.window_size = 1024;
    c.stride = 512;

    std::set<std::string> grams;
    for (std::size_t i = 0; i + 4 <= p.bytes.size(); ++i) grams.insert(to_string(ByteView(p.bytes).subspan(i, 4)));
    std::vector<taint::Window> expected;
    for (std::size_t w = 0; w < buf.size(); w += c.stride) {
      auto len = std::min(c.window_size, buf.size() - w);
      std::set<std::string> seen;
      for (std::size_t i = w; i + 4 <= w + len; ++i) {
        auto g = to_string(ByteView(buf).subspan(i, 4));
        if (grams.contains(g)) seen.insert(g);
      }
      if (!seen.empty() && static_cast<double>(seen.size()) / static_cast<double>(grams.size()) >= 0.5) {
        expected.push_back({w, len});
      }
      if (w + len >= buf.size()) break;
    }
    auto got = taint::coarse_scan(buf, p, c);
    ASSERT_EQ(got, expected);
    bool contains_plant = false;
    for (const auto& w : got) contains_plant |= w.offset <= at && at + p.bytes.size() <= w.offset + w.length;
    EXPECT_TRUE(contains_plant);
  }
}

TEST(FineMatch, Examples) {
  auto exact = taint::fine_match(B("xxSECRETKEYyy"), B("SECRETKEY"), 0);
  ASSERT_TRUE(exact);
  EXPECT_EQ(*exact, (taint::FineMatch{0, 2, 9}));

  // Both "SECRETKEX" (substitution) and "SECRETKE" (deletion) are at distance
  // 1 from offset 0; the shorter span wins the tie.
  auto one = taint::fine_match(B("SECRETKEX"), B("SECRETKEY"), 1);
  ASSERT_TRUE(one);
  EXPECT_EQ(one->edit_distance, 1u);
  EXPECT_EQ(one->offset, 0u);
  EXPECT_EQ(one->length, 8u);
  EXPECT_EQ(levenshtein(B("SECRETKEY"), B("SECRETKEX")), 1u);
  EXPECT_EQ(*one, *brute_fine(B("SECRETKEX"), B("SECRETKEY"), 1));

  EXPECT_FALSE(taint::fine_match(B("SECRETKEX"), B("SECRETKEY"), 0));
  EXPECT_FALSE(taint::fine_match(B(""), B("SECRETKEY"), 2));
}

TEST(FineMatch, MatchesBruteForce) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 1500; ++t) {
    Bytes pattern(4 + rng() % 5);
    for (auto& x : pattern) x = static_cast<std::uint8_t>('a' + rng() % 3);
    Bytes slice(rng() % 20);
    for (auto& x : slice) x = static_cast<std::uint8_t>('a' + rng() % 3);
    std::size_t k = rng() % 4;
    ASSERT_EQ(taint::fine_match(slice, pattern, k), brute_fine(slice, pattern, k))
        << to_string(pattern) << " in " << to_string(slice) << " k=" << k;
  }
}

TEST(Scan, NoPatterns) {
  taint::Scanner scanner;
  EXPECT_TRUE(scanner.scan(B("anything at all")).empty());
  EXPECT_TRUE(taint::Scanner({}, TaintConfig{}).scan(B("x")).empty());
}

TEST(Scan, TwoDisjointPlants) {
  std::mt19937_64 rng(1);
  auto p = taint::make_pattern("key", B("0123456789ABCDEF"));
  Bytes buf = lowercase_noise(rng, 3000);
  std::copy(p.bytes.begin(), p.bytes.end(), buf.begin() + 100);
  auto m2 = mutate(rng, p.bytes, 1);
  std::copy(m2.begin(), m2.end(), buf.begin() + 2500);
  std::vector<SensitivePattern> ps{p};
  auto c = permissive(ps, 2, 4, 1024, 512);
  auto got = taint::scan(buf, ps, c);
  EXPECT_EQ(got, brute_scan(buf, ps, 2));
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].buffer_offset, 100u);
  EXPECT_EQ(got[0].edit_distance, 0u);
}

// A plant at every offset of a small buffer, including across stride
// boundaries, for k = 0, 1, 2.
TEST(Scan, EveryOffsetMatchesOracle) {
  std::mt19937_64 rng(77);
  auto p = taint::make_pattern("sec", B("Q7#mZp!2vK9@xW4&"));
  std::vector<SensitivePattern> ps{p};
  for (std::size_t k = 0; k <= 2; ++k) {
    auto c = permissive(ps, k, 3, 64, 32);
    const Bytes base = lowercase_noise(rng, 200);
    for (std::size_t at = 0; at + p.bytes.size() + k <= base.size(); ++at) {
      Bytes buf = base;
      auto planted = mutate(rng, p.bytes, rng() % (k + 1));
      std::copy(planted.begin(), planted.end(), buf.begin() + static_cast<std::ptrdiff_t>(at));
      ASSERT_EQ(taint::scan(buf, ps, c), brute_scan(buf, ps, k)) << "k=" << k << " at=" << at;
    }
  }
}

TEST(Scan, RecallThreshold) {
  auto p = B("abcdefghijklmnop");  // 16 distinct 3-grams -> 14
  EXPECT_DOUBLE_EQ(*taint::recall_threshold(p, 3, 2), 1.0 - 6.0 / 14.0);
  EXPECT_DOUBLE_EQ(*taint::recall_threshold(p, 3, 0), 1.0);
  EXPECT_FALSE(taint::recall_threshold(B("aaaaaa"), 3, 1));
}

TEST(Scan, Determinism) {
  std::mt19937_64 rng(3);
  auto ps = taint::parse_patterns("a\t" + to_hex(B("correct horse")) + "\nb\t" + to_hex(B("battery")) + "\n");
  Bytes buf = lowercase_noise(rng, 4096);
  std::copy_n("correct h0rse", 13, buf.begin() + 50);
  std::copy_n("batery", 6, buf.begin() + 3000);
  TaintConfig c;
  c.qgram_size = 3;
  c.max_edit_distance = 1;
  c.coarse_threshold = 0.3;
  EXPECT_EQ(taint::scan(buf, ps, c), taint::scan(buf, ps, c));
}

// Lowering the threshold or using a stride that refines the window grid never
// loses coverage: each stricter match overlaps a permissive match that is at
// least as close.
TEST(Scan, Monotonicity) {
  std::mt19937_64 rng(21);
  auto p = taint::make_pattern("s", B("zq8Lw2Rt5Ym1"));
  std::vector<SensitivePattern> ps{p};
  for (int t = 0; t < 200; ++t) {
    Bytes buf = lowercase_noise(rng, 600);
    for (int plants = 0; plants < 3; ++plants) {
      auto m = mutate(rng, p.bytes, rng() % 3);
      auto at = rng() % (buf.size() - m.size());
      std::copy(m.begin(), m.end(), buf.begin() + static_cast<std::ptrdiff_t>(at));
    }
    TaintConfig strict;
    strict.window_size = 64;
    strict.stride = 64;
    strict.qgram_size = 3;
    strict.max_edit_distance = 2;
    strict.coarse_threshold = 0.9;
    for (auto loosen : {0, 1}) {
      TaintConfig loose = strict;
      if (loosen == 0) loose.coarse_threshold = 0.4;
      else loose.stride = 32;
      auto a = taint::scan(buf, ps, strict);
      auto b = taint::scan(buf, ps, loose);
      for (const auto& m : a) {
        bool covered = false;
        for (const auto& n : b) {
          covered |= m.buffer_offset < n.buffer_offset + n.span_length &&
                     n.buffer_offset < m.buffer_offset + m.span_length &&
                     n.edit_distance <= m.edit_distance;
        }
        ASSERT_TRUE(covered) << "t=" << t << " loosen=" << loosen;
      }
    }
  }
}
