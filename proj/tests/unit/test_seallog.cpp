// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <signal.h>
#include <sys/resource.h>

#include <random>

#include "rvtee/error.hpp"
#include "rvtee/file.hpp"
#include "rvtee/seallog.hpp"
#include "rvtee/verifier.hpp"
#include "support.hpp"

using namespace rvtee;
using rvtee::testkit::TempDir;
using rvtee::testkit::TestStore;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an rvtee::Error";
  return ErrorCode::Io;
}

seal::SealRecord random_record(std::mt19937_64& rng) {
  seal::SealRecord r{rng(), rng(), rng() | 1, rng(), {}};
  for (auto& b : r.hmac) b = static_cast<std::uint8_t>(rng());
  return r;
}

}  // namespace

TEST(RecordCodec, GoldenLayout) {
  seal::SealRecord r{1, 2, 3, 4, {}};
  for (int i = 0; i < 32; ++i) r.hmac[i] = static_cast<std::uint8_t>(0xe0 + i % 16);
  auto enc = seal::encode_record(r);
  // struct.pack('<QQQQ', 1, 2, 3, 4) followed by the digest.
  EXPECT_EQ(to_hex(ByteView(enc.data(), 32)),
            "0100000000000000020000000000000003000000000000000400000000000000");
  EXPECT_EQ(to_hex(ByteView(enc.data() + 32, 32)),
            "e0e1e2e3e4e5e6e7e8e9eaebecedeeefe0e1e2e3e4e5e6e7e8e9eaebecedeeef");
  EXPECT_EQ(seal::decode_record(enc), r);
}

TEST(RecordCodec, WrongLength) {
  Bytes b(63);
  EXPECT_EQ(code_of([&] { seal::decode_record(b); }), ErrorCode::MalformedRecord);
  b.resize(65);
  EXPECT_EQ(code_of([&] { seal::decode_record(b); }), ErrorCode::MalformedRecord);
}

TEST(RecordCodec, RandomRoundTrip) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 10000; ++i) {
    auto r = random_record(rng);
    ASSERT_EQ(seal::decode_record(seal::encode_record(r)), r);
  }
}

TEST(Header, LayoutAndErrors) {
  auto h = seal::encode_header({4096, 64});
  ASSERT_EQ(h.size(), 22u);
  EXPECT_EQ(to_string(ByteView(h).first(4)), "RVS1");
  EXPECT_EQ(get_u16le(h.data() + 4), 1u);
  EXPECT_EQ(get_u64le(h.data() + 6), 64u);
  EXPECT_EQ(get_u64le(h.data() + 14), 4096u);
  EXPECT_EQ(seal::decode_header(h), (hsm::Geometry{4096, 64}));
  auto bad = h;
  bad[1] ^= 1;
  EXPECT_EQ(code_of([&] { seal::decode_header(bad); }), ErrorCode::MalformedHeader);
  bad = h;
  bad[4] = 2;
  EXPECT_EQ(code_of([&] { seal::decode_header(bad); }), ErrorCode::MalformedHeader);
  EXPECT_EQ(code_of([&] { seal::decode_header(ByteView(h).first(21)); }), ErrorCode::MalformedHeader);
}

TEST(Registry, RoundTripAndErrors) {
  TempDir dir;
  seal::Registry reg{{1, dir / "a.log"}, {7, dir / "sub" / "b.log"}};
  seal::save_registry(dir / "registry.tsv", reg);
  EXPECT_EQ(seal::load_registry(dir / "registry.tsv"), reg);

  write_file(dir / "r2.tsv", as_bytes("# comment\n\n3\trel.log\n"));
  auto r2 = seal::load_registry(dir / "r2.tsv");
  ASSERT_EQ(r2.size(), 1u);
  EXPECT_EQ(r2.at(3), dir / "rel.log");

  write_file(dir / "r3.tsv", as_bytes("x\ta.log\n"));
  EXPECT_EQ(code_of([&] { seal::load_registry(dir / "r3.tsv"); }), ErrorCode::Config);
  write_file(dir / "r4.tsv", as_bytes("1\ta\n1\tb\n"));
  EXPECT_EQ(code_of([&] { seal::load_registry(dir / "r4.tsv"); }), ErrorCode::Config);
}

TEST(SealLogStore, FirstAppendsFollowTheAlgorithm) {
  TestStore s({1024, 32}, 1);
  auto r1 = s.store->append_sealed(1, as_bytes("hello"));
  EXPECT_EQ(r1.log_id, 1u);
  EXPECT_EQ(r1.log_offset, 0u);
  EXPECT_EQ(r1.data_size, 5u);
  EXPECT_EQ(r1.key_offset, 0u);
  auto r2 = s.store->append_sealed(1, as_bytes("world!!"));
  EXPECT_EQ(r2.log_offset, 5u);
  EXPECT_EQ(r2.data_size, 7u);
  EXPECT_EQ(r2.key_offset, 32u);
  auto r3 = s.store->append_sealed(2, as_bytes("v"));
  EXPECT_EQ(r3.log_offset, 0u);
  EXPECT_EQ(r3.key_offset, 64u);

  EXPECT_EQ(to_string(read_file(s.registry.at(1))), "helloworld!!");
  EXPECT_EQ(s.store->next_log_offset(1), 12u);
  EXPECT_EQ(s.store->record_count(), 3u);

  auto records = seal::iter_records(s.seal_log);
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0], r1);
  EXPECT_EQ(records[1], r2);
  EXPECT_EQ(records[2], r3);
  EXPECT_EQ(r1.hmac, hsm::seal_mac(s.safe_copy->chunk_at(0), 1, 0, 5, 0, as_bytes("hello")));
}

TEST(SealLogStore, Errors) {
  TestStore s({128, 32}, 2, 1);
  EXPECT_EQ(code_of([&] { s.store->append_sealed(9, as_bytes("x")); }), ErrorCode::UnknownLog);
  EXPECT_EQ(code_of([&] { s.store->append_sealed(1, {}); }), ErrorCode::EmptyData);
  EXPECT_EQ(s.device->attested_key_offset(), 0u);
  EXPECT_EQ(s.store->record_count(), 0u);
  EXPECT_EQ(code_of([&] { seal::SealLogStore::create(s.seal_log, s.registry, *s.device); }),
            ErrorCode::StorageFailure);
}

TEST(SealLogStore, ByteReproducibleForSameInputs) {
  auto run = [](std::uint64_t seed) {
    TestStore s({4096, 32}, seed);
    std::mt19937_64 rng(55);
    for (int i = 0; i < 60; ++i) {
      s.store->append_sealed(1 + rng() % 2, testkit::random_bytes(rng, 1 + rng() % 40));
    }
    return std::make_pair(read_file(s.seal_log), read_file(s.registry.at(1)));
  };
  EXPECT_EQ(run(77), run(77));
  EXPECT_NE(run(77).first, run(78).first);
}

TEST(SealLogStore, TilingAndKeyArithmetic) {
  TestStore s({32 * 300, 32}, 3, 3);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 300; ++i) {
    s.store->append_sealed(1 + rng() % 3, testkit::random_bytes(rng, 1 + rng() % 100));
  }
  auto records = seal::iter_records(s.seal_log);
  ASSERT_EQ(records.size(), 300u);
  std::map<std::uint64_t, std::uint64_t> end;
  for (std::size_t k = 0; k < records.size(); ++k) {
    EXPECT_EQ(records[k].key_offset, k * 32);
    EXPECT_EQ(records[k].log_offset, end[records[k].log_id]);
    end[records[k].log_id] += records[k].data_size;
  }
  for (auto& [id, path] : s.registry) EXPECT_EQ(std::filesystem::file_size(path), end[id]);
}

TEST(SealLogStore, ExhaustionWritesNothing) {
  TestStore s({128, 32}, 4, 1);
  for (int i = 0; i < 4; ++i) s.store->append_sealed(1, as_bytes("abc"));
  auto seal_before = read_file(s.seal_log);
  auto log_before = read_file(s.registry.at(1));
  EXPECT_EQ(code_of([&] { s.store->append_sealed(1, as_bytes("more")); }), ErrorCode::KeyExhausted);
  EXPECT_EQ(read_file(s.seal_log), seal_before);
  EXPECT_EQ(read_file(s.registry.at(1)), log_before);
  EXPECT_EQ(s.store->next_log_offset(1), 12u);
  auto report = verify::verify(s.registry, s.seal_log, *s.safe_copy, s.device->attested_key_offset());
  EXPECT_TRUE(report.pass);
}

TEST(SealLogStore, ReopenContinues) {
  TestStore s({1024, 32}, 6);
  s.store->append_sealed(1, as_bytes("one"));
  s.store->append_sealed(2, as_bytes("two"));
  s.store.reset();
  s.store = seal::SealLogStore::open(s.seal_log, s.registry, *s.device);
  EXPECT_TRUE(s.store->orphans().empty());
  EXPECT_TRUE(s.store->warnings().empty());
  EXPECT_EQ(s.store->record_count(), 2u);
  EXPECT_EQ(s.store->next_log_offset(1), 3u);
  auto r = s.store->append_sealed(1, as_bytes("three"));
  EXPECT_EQ(r.log_offset, 3u);
  EXPECT_EQ(r.key_offset, 64u);
  EXPECT_TRUE(verify::verify(s.registry, s.seal_log, *s.safe_copy, 96).pass);
}

// Log bytes written after the last record (a crash between the log write and
// the record write) are reported on open and stay unsealed.
TEST(SealLogStore, OrphanBytesReportedOnOpen) {
  TestStore s({1024, 32}, 7, 1);
  s.store->append_sealed(1, as_bytes("sealed"));
  s.store.reset();
  {
    File f(s.registry.at(1), File::Mode::ReadWrite);
    f.write_at(6, as_bytes("junk"));
  }
  s.store = seal::SealLogStore::open(s.seal_log, s.registry, *s.device);
  ASSERT_EQ(s.store->orphans().size(), 1u);
  EXPECT_EQ(s.store->orphans()[0].log_id, 1u);
  EXPECT_EQ(s.store->orphans()[0].begin, 6u);
  EXPECT_EQ(s.store->orphans()[0].end, 10u);
  auto r = s.store->append_sealed(1, as_bytes("next"));
  EXPECT_EQ(r.log_offset, 10u);
  auto report = verify::verify(s.registry, s.seal_log, *s.safe_copy, std::nullopt);
  EXPECT_FALSE(report.pass);
  ASSERT_TRUE(report.first_failure);
  EXPECT_EQ(report.first_failure->kind, verify::FailureClass::CoverageGap);
}

TEST(SealLogStore, OpenRejectsGeometryMismatch) {
  TestStore s({1024, 32}, 8, 1);
  auto other = hsm::Hsm::provision(std::make_unique<SeededEntropy>(1), {2048, 32});
  EXPECT_EQ(code_of([&] { seal::SealLogStore::open(s.seal_log, s.registry, *other.device); }),
            ErrorCode::MalformedHeader);
}

TEST(RecordReader, EmptyThreeAndTruncated) {
  TestStore s({1024, 32}, 9, 1);
  EXPECT_TRUE(seal::iter_records(s.seal_log).empty());
  for (auto d : {"a", "bb", "ccc"}) s.store->append_sealed(1, as_bytes(d));
  auto all = seal::iter_records(s.seal_log);
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[2].data_size, 3u);

  {
    File f(s.seal_log, File::Mode::ReadWrite);
    f.truncate(seal::kHeaderSize + 2 * seal::kRecordSize + 17);
  }
  seal::RecordReader reader(s.seal_log);
  ASSERT_TRUE(reader.next());
  ASSERT_TRUE(reader.next());
  EXPECT_EQ(code_of([&] { reader.next(); }), ErrorCode::MalformedRecord);
  EXPECT_EQ(code_of([&] { seal::iter_records(s.seal_log); }), ErrorCode::MalformedRecord);

  write_file(s.dir / "bad.log", as_bytes("RVS"));
  EXPECT_EQ(code_of([&] { seal::RecordReader r(s.dir / "bad.log"); }), ErrorCode::MalformedHeader);
}

// A SEAL_log write that fails half-way (file size limit reached) leaves no log
// bytes and no record behind; the chunk it consumed stays burned.
TEST(SealLogStore, StorageFailureRollsBack) {
  TestStore s({1024, 32}, 10, 1);
  s.store->append_sealed(1, as_bytes("before"));
  auto seal_size = std::filesystem::file_size(s.seal_log);
  auto log_before = read_file(s.registry.at(1));

  struct sigaction ignore {}, old {};
  ignore.sa_handler = SIG_IGN;
  sigaction(SIGXFSZ, &ignore, &old);
  rlimit saved{};
  getrlimit(RLIMIT_FSIZE, &saved);
  rlimit limit = saved;
  limit.rlim_cur = seal_size + 10;
  setrlimit(RLIMIT_FSIZE, &limit);
  auto code = code_of([&] { s.store->append_sealed(1, as_bytes("lost")); });
  setrlimit(RLIMIT_FSIZE, &saved);
  sigaction(SIGXFSZ, &old, nullptr);

  EXPECT_EQ(code, ErrorCode::StorageFailure);
  EXPECT_EQ(std::filesystem::file_size(s.seal_log), seal_size);
  EXPECT_EQ(read_file(s.registry.at(1)), log_before);
  EXPECT_EQ(s.device->attested_key_offset(), 64u);
  EXPECT_EQ(s.store->record_count(), 1u);

  // The burned-but-unrecorded chunk is visible to the verifier.
  s.store->append_sealed(1, as_bytes("after"));
  auto report = verify::verify(s.registry, s.seal_log, *s.safe_copy, s.device->attested_key_offset());
  EXPECT_FALSE(report.pass);
  ASSERT_TRUE(report.first_failure);
  EXPECT_EQ(report.first_failure->kind, verify::FailureClass::KeyDesync);
  EXPECT_EQ(report.first_failure->record_index, 1u);
}
