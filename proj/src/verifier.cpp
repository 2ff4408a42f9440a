// SPDX-License-Identifier: Apache-2.0
#include "rvtee/verifier.hpp"

#include <algorithm>
#include <memory>

#include <fmt/format.h>
#include <json.hpp>

#include "rvtee/error.hpp"
#include "rvtee/file.hpp"

namespace rvtee::verify {

std::string_view to_string(FailureClass kind) {
  switch (kind) {
    case FailureClass::HmacMismatch: return "HmacMismatch";
    case FailureClass::CoverageGap: return "CoverageGap";
    case FailureClass::CoverageOverlap: return "CoverageOverlap";
    case FailureClass::OrphanTail: return "OrphanTail";
    case FailureClass::KeyDesync: return "KeyDesync";
    case FailureClass::MalformedRecord: return "MalformedRecord";
    case FailureClass::MissingLog: return "MissingLog";
  }
  return "Unknown";
}

crypto::Digest recompute_hmac(const seal::SealRecord& record, ByteView data,
                              const hsm::SafeCopy& safe_copy) {
  auto chunk = safe_copy.chunk_at(record.key_offset);
  return hsm::seal_mac(chunk, record.log_id, record.log_offset, record.data_size,
                       record.key_offset, data);
}

std::vector<CoverageIssue> check_coverage(std::span<const seal::SealRecord> records,
                                          const std::map<std::uint64_t, std::uint64_t>& log_lengths) {
  std::map<std::uint64_t, std::vector<std::pair<std::uint64_t, std::uint64_t>>> spans;
  for (const auto& r : records) {
    if (!log_lengths.contains(r.log_id)) continue;
    // Saturate so a forged huge offset cannot wrap around.
    auto end = r.log_offset > UINT64_MAX - r.data_size ? UINT64_MAX : r.log_offset + r.data_size;
    spans[r.log_id].emplace_back(r.log_offset, end);
  }

  std::vector<CoverageIssue> issues;
  for (const auto& [log_id, length] : log_lengths) {
    auto& iv = spans[log_id];
    std::sort(iv.begin(), iv.end());
    std::uint64_t cursor = 0;
    for (const auto& [b, e] : iv) {
      if (b > cursor) {
        issues.push_back({log_id, FailureClass::CoverageGap, cursor, b});
      } else if (b < cursor && e > b) {
        const auto end = std::min(e, cursor);
        auto* last = issues.empty() ? nullptr : &issues.back();
        if (last && last->log_id == log_id && last->kind == FailureClass::CoverageOverlap &&
            last->end >= b) {
          last->end = std::max(last->end, end);
        } else {
          issues.push_back({log_id, FailureClass::CoverageOverlap, b, end});
        }
      }
      cursor = std::max(cursor, e);
    }
    if (length > cursor) {
      issues.push_back({log_id, FailureClass::OrphanTail, cursor, length});
    } else if (cursor > length) {
      issues.push_back({log_id, FailureClass::CoverageGap, length, cursor});
    }
  }
  return issues;
}

namespace {

struct OpenLog {
  std::unique_ptr<File> file;
  std::uint64_t length = 0;
};

Failure make_failure(FailureClass kind, std::optional<std::uint64_t> index,
                     std::optional<std::uint64_t> log_id, std::uint64_t begin, std::uint64_t end,
                     std::string detail) {
  return Failure{kind, index, log_id, begin, end, std::move(detail)};
}

}  // namespace

VerificationReport verify(const seal::Registry& logs, const std::filesystem::path& seal_log,
                          const hsm::SafeCopy& safe_copy,
                          std::optional<std::uint64_t> attested_key_offset) {
  VerificationReport report;
  const auto& geometry = safe_copy.geometry();
  report.capacity = geometry.chunks();
  report.attested_offset_used = attested_key_offset;

  auto finish = [&report]() -> VerificationReport {
    report.pass = report.failures.empty();
    if (!report.failures.empty()) report.first_failure = report.failures.front();
    return std::move(report);
  };

  std::unique_ptr<seal::RecordReader> reader;
  try {
    reader = std::make_unique<seal::RecordReader>(seal_log);
  } catch (const Error& e) {
    report.failures.push_back(make_failure(FailureClass::MalformedRecord, std::nullopt,
                                           std::nullopt, 0, 0,
                                           std::string("seal log header: ") + e.what()));
    return finish();
  }
  if (!(reader->geometry() == geometry)) {
    report.failures.push_back(make_failure(
        FailureClass::MalformedRecord, std::nullopt, std::nullopt, 0, 0,
        fmt::format("seal log geometry (chunk {}, key {}) does not match safe copy (chunk {}, key {})",
                    reader->geometry().chunk_size, reader->geometry().key_length,
                    geometry.chunk_size, geometry.key_length)));
    return finish();
  }

  std::map<std::uint64_t, OpenLog> open_logs;
  std::map<std::uint64_t, std::uint64_t> lengths;
  std::vector<Failure> structural;
  for (const auto& [id, path] : logs) {
    try {
      OpenLog ol;
      ol.file = std::make_unique<File>(path, File::Mode::Read);
      ol.length = ol.file->size();
      lengths[id] = ol.length;
      open_logs.emplace(id, std::move(ol));
    } catch (const Error& e) {
      structural.push_back(make_failure(FailureClass::MissingLog, std::nullopt, id, 0, 0,
                                        fmt::format("log {} unreadable: {}", id, e.what())));
    }
  }

  std::vector<seal::SealRecord> records;
  Bytes data;
  for (;;) {
    std::optional<seal::SealRecord> next;
    try {
      next = reader->next();
    } catch (const Error& e) {
      report.failures.push_back(make_failure(FailureClass::MalformedRecord,
                                             reader->records_read(), std::nullopt, 0, 0, e.what()));
      break;
    }
    if (!next) break;
    const auto& r = *next;
    const std::uint64_t index = reader->records_read() - 1;
    records.push_back(r);
    ++report.records_checked;

    const std::uint64_t end =
        r.log_offset > UINT64_MAX - r.data_size ? UINT64_MAX : r.log_offset + r.data_size;

    if (r.key_offset % geometry.chunk_size != 0 || r.key_offset >= geometry.key_length) {
      report.failures.push_back(make_failure(
          FailureClass::KeyDesync, index, r.log_id, r.log_offset, end,
          fmt::format("key offset {} does not address a keystream chunk", r.key_offset)));
      continue;
    }
    auto log = open_logs.find(r.log_id);
    if (log == open_logs.end()) {
      report.failures.push_back(make_failure(FailureClass::MissingLog, index, r.log_id,
                                             r.log_offset, end,
                                             fmt::format("record refers to log {} which is not available", r.log_id)));
      continue;
    }
    if (end > log->second.length) {
      report.failures.push_back(make_failure(
          FailureClass::CoverageGap, index, r.log_id, r.log_offset, end,
          fmt::format("sealed range [{},{}) exceeds log length {}", r.log_offset, end,
                      log->second.length)));
      continue;
    }
    data.resize(r.data_size);
    try {
      log->second.file->read_at(r.log_offset, data);
    } catch (const Error& e) {
      report.failures.push_back(make_failure(FailureClass::MissingLog, index, r.log_id,
                                             r.log_offset, end, e.what()));
      continue;
    }
    auto mac = recompute_hmac(r, data, safe_copy);
    if (!crypto::digest_equal(mac, r.hmac)) {
      report.failures.push_back(make_failure(FailureClass::HmacMismatch, index, r.log_id,
                                             r.log_offset, end, "HMAC does not match"));
      continue;
    }
    if (r.key_offset != index * geometry.chunk_size) {
      report.failures.push_back(make_failure(
          FailureClass::KeyDesync, index, r.log_id, r.log_offset, end,
          fmt::format("key offset {} out of sequence (expected {})", r.key_offset,
                      index * geometry.chunk_size)));
    }
  }

  for (const auto& issue : check_coverage(records, lengths)) {
    structural.push_back(make_failure(issue.kind, std::nullopt, issue.log_id, issue.begin,
                                      issue.end,
                                      fmt::format("log {} bytes [{},{})", issue.log_id,
                                                  issue.begin, issue.end)));
  }

  const std::uint64_t consumed = report.records_checked * geometry.chunk_size;
  if (attested_key_offset) {
    if (*attested_key_offset != consumed) {
      structural.push_back(make_failure(
          FailureClass::KeyDesync, std::nullopt, std::nullopt, 0, 0,
          fmt::format("device consumed {} key bytes but {} records account for {}",
                      *attested_key_offset, report.records_checked, consumed)));
    }
  } else {
    report.warnings.push_back(
        "key consumption not attested: a consistent truncation of SEAL_log and logs cannot be detected");
  }

  for (const auto& [id, length] : lengths) {
    LogCoverage cov{id, true, length, 0, 0};
    for (const auto& r : records) {
      if (r.log_id != id) continue;
      ++cov.records;
      cov.covered_bytes += r.data_size;
    }
    report.coverage.push_back(cov);
  }
  for (const auto& [id, path] : logs) {
    if (!lengths.contains(id)) report.coverage.push_back(LogCoverage{id, false, 0, 0, 0});
  }

  report.failures.insert(report.failures.end(), structural.begin(), structural.end());
  return finish();
}

namespace {

std::string describe(const Failure& f) {
  std::string where;
  if (f.record_index) where = fmt::format("record {}: ", *f.record_index);
  return fmt::format("{}{} ({})", where, to_string(f.kind), f.detail);
}

nlohmann::ordered_json failure_json(const Failure& f) {
  nlohmann::ordered_json j;
  j["class"] = to_string(f.kind);
  j["record_index"] = f.record_index ? nlohmann::ordered_json(*f.record_index) : nullptr;
  j["log_id"] = f.log_id ? nlohmann::ordered_json(*f.log_id) : nullptr;
  j["begin"] = f.begin;
  j["end"] = f.end;
  j["detail"] = f.detail;
  return j;
}

}  // namespace

std::string to_text(const VerificationReport& report) {
  std::string out;
  out += fmt::format("verification: {}\n", report.pass ? "PASS" : "FAIL");
  out += fmt::format("records checked: {}\n", report.records_checked);
  out += fmt::format("capacity: {} appends\n", report.capacity);
  if (report.attested_offset_used) {
    out += fmt::format("attested key offset: {}\n", *report.attested_offset_used);
  }
  if (report.first_failure) out += "first failure: " + describe(*report.first_failure) + "\n";
  for (const auto& f : report.failures) out += "failure: " + describe(f) + "\n";
  for (const auto& c : report.coverage) {
    if (!c.present) {
      out += fmt::format("log {}: missing\n", c.log_id);
    } else {
      out += fmt::format("log {}: {} bytes, {} sealed in {} records\n", c.log_id, c.file_length,
                         c.covered_bytes, c.records);
    }
  }
  for (const auto& w : report.warnings) out += "WARNING: " + w + "\n";
  return out;
}

std::string to_json(const VerificationReport& report) {
  nlohmann::ordered_json j;
  j["overall"] = report.pass ? "pass" : "fail";
  j["records_checked"] = report.records_checked;
  j["capacity"] = report.capacity;
  j["first_failure"] = report.first_failure ? failure_json(*report.first_failure) : nullptr;
  j["failures"] = nlohmann::ordered_json::array();
  for (const auto& f : report.failures) j["failures"].push_back(failure_json(f));
  j["coverage"] = nlohmann::ordered_json::array();
  for (const auto& c : report.coverage) {
    j["coverage"].push_back({{"log_id", c.log_id},
                             {"present", c.present},
                             {"file_length", c.file_length},
                             {"covered_bytes", c.covered_bytes},
                             {"records", c.records}});
  }
  j["attested_offset_used"] =
      report.attested_offset_used ? nlohmann::ordered_json(*report.attested_offset_used) : nullptr;
  j["warnings"] = report.warnings;
  return j.dump(2) + "\n";
}

}  // namespace rvtee::verify
