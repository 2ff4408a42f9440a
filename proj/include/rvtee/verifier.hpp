// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rvtee/crypto.hpp"
#include "rvtee/hsm.hpp"
#include "rvtee/seallog.hpp"

namespace rvtee::verify {

enum class FailureClass {
  HmacMismatch,
  CoverageGap,
  CoverageOverlap,
  OrphanTail,
  KeyDesync,
  MalformedRecord,
  MissingLog,
};

std::string_view to_string(FailureClass kind);

/// One finding. Per-record findings carry record_index; structural ones
/// (coverage, attestation, header) do not.
struct Failure {
  FailureClass kind = FailureClass::MalformedRecord;
  std::optional<std::uint64_t> record_index;
  std::optional<std::uint64_t> log_id;
  std::uint64_t begin = 0;  // affected log byte range, when meaningful
  std::uint64_t end = 0;
  std::string detail;
};

struct LogCoverage {
  std::uint64_t log_id = 0;
  bool present = false;
  std::uint64_t file_length = 0;
  std::uint64_t covered_bytes = 0;
  std::uint64_t records = 0;
};

struct VerificationReport {
  bool pass = false;
  std::uint64_t records_checked = 0;
  std::optional<Failure> first_failure;
  std::vector<Failure> failures;
  std::vector<LogCoverage> coverage;
  std::optional<std::uint64_t> attested_offset_used;
  std::uint64_t capacity = 0;  // total appends the keystream supports
  std::vector<std::string> warnings;
};

/// MAC over (record fields, data) using the safe-copy chunk at
/// record.key_offset. Throws Error(OutOfRange) for an unusable key offset.
crypto::Digest recompute_hmac(const seal::SealRecord& record, ByteView data,
                              const hsm::SafeCopy& safe_copy);

struct CoverageIssue {
  std::uint64_t log_id = 0;
  FailureClass kind = FailureClass::CoverageGap;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;

  friend bool operator==(const CoverageIssue&, const CoverageIssue&) = default;
};

/// Checks that each log's records tile [0, length) exactly. Records for logs
/// absent from log_lengths are ignored. Sealed ranges beyond the end of the
/// file are reported as CoverageGap.
std::vector<CoverageIssue> check_coverage(std::span<const seal::SealRecord> records,
                                          const std::map<std::uint64_t, std::uint64_t>& log_lengths);

/// Sequentially authenticates every SEAL_log record. Never throws for
/// tampering or I/O problems; those become report outcomes.
VerificationReport verify(const seal::Registry& logs, const std::filesystem::path& seal_log,
                          const hsm::SafeCopy& safe_copy,
                          std::optional<std::uint64_t> attested_key_offset);

std::string to_text(const VerificationReport& report);
std::string to_json(const VerificationReport& report);

}  // namespace rvtee::verify
